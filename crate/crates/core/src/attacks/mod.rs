//! Membership-inference attacks: loss thresholds, shadow-model and
//! feature-concatenation learned attacks, the reference-data attack and the
//! nearest-reference distance attack.

mod io;
mod learned;
mod threshold;

pub use io::{load_attack_set, read_attack_set, save_attack_set, write_attack_set};
pub use learned::{
    nn_attack, nsh_attack, nsh_feature_set, nsh_features, ref_data_mia, sorted_prediction_set, train_attack_model,
    AttackTrainConfig, NshMode, RefRiskReport,
};
pub use threshold::{adaptive_distance_attack, bl_attack, hamming_distance, tune_threshold, BlReport, DistancePoint};
pub(crate) use threshold::losses_and_hits;

use std::collections::HashSet;

use ndarray::ArrayView2;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nncore::{Mlp, PROB_FLOOR};

/// Feature layout of an attack instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    /// Scalar cross-entropy loss of the target.
    Loss,
    /// Target prediction vector sorted in descending order.
    SortedProbs,
    NshBlackbox,
    NshWhitebox,
    /// Scalar Hamming distance to the nearest reference row.
    Distance,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Loss => "loss",
            AttackKind::SortedProbs => "sorted_probs",
            AttackKind::NshBlackbox => "nsh_blackbox",
            AttackKind::NshWhitebox => "nsh_whitebox",
            AttackKind::Distance => "distance",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            AttackKind::Loss,
            AttackKind::SortedProbs,
            AttackKind::NshBlackbox,
            AttackKind::NshWhitebox,
            AttackKind::Distance,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    fn is_scalar(self) -> bool {
        matches!(self, AttackKind::Loss | AttackKind::Distance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackInstance {
    pub features: Vec<f64>,
    pub is_member: bool,
}

/// Instances sharing one feature layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSet {
    kind: AttackKind,
    dim: usize,
    instances: Vec<AttackInstance>,
}

impl AttackSet {
    pub fn new(kind: AttackKind, dim: usize, instances: Vec<AttackInstance>) -> Result<Self> {
        if kind.is_scalar() && dim != 1 {
            return Err(Error::invalid(format!("{} features are scalar, got dim {dim}", kind.name())));
        }
        for (i, inst) in instances.iter().enumerate() {
            if inst.features.len() != dim {
                return Err(Error::invalid(format!(
                    "instance {i} has {} features, set dimension is {dim}",
                    inst.features.len()
                )));
            }
            if inst.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("instance {i} has a non-finite feature")));
            }
        }
        Ok(Self { kind, dim, instances })
    }

    /// All rows of `rows` with one membership flag.
    pub fn from_rows(kind: AttackKind, dim: usize, rows: Vec<Vec<f64>>, is_member: bool) -> Result<Self> {
        let instances = rows
            .into_iter()
            .map(|features| AttackInstance { features, is_member })
            .collect();
        Self::new(kind, dim, instances)
    }

    pub fn kind(&self) -> AttackKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn instances(&self) -> &[AttackInstance] {
        &self.instances
    }

    pub fn instances_mut(&mut self) -> &mut [AttackInstance] {
        &mut self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Concatenates two sets of the same layout.
    pub fn concat(mut self, other: AttackSet) -> Result<Self> {
        if self.kind != other.kind || self.dim != other.dim {
            return Err(Error::invalid("attack sets differ in layout"));
        }
        self.instances.extend(other.instances);
        Ok(self)
    }

    pub fn count_members(&self) -> usize {
        self.instances.iter().filter(|i| i.is_member).count()
    }
}

/// Per-feature affine map applied before a learned attack model.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Mean and standard deviation of each column; constant columns get
    /// scale 1.
    pub fn fit(rows: &[AttackInstance], dim: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(&r.features) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(&r.features).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackRule {
    /// Member iff the scalar feature is strictly below the value.
    Threshold(f64),
    /// Two-class network; class 1 means member.
    Mlp { net: Mlp, standardizer: Standardizer },
}

/// A membership classifier `h` together with the layout it consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackModel {
    pub rule: AttackRule,
    pub feature_kind: AttackKind,
}

impl AttackModel {
    pub fn threshold(value: f64, feature_kind: AttackKind) -> Result<Self> {
        if !feature_kind.is_scalar() {
            return Err(Error::invalid(format!(
                "threshold attacks need scalar features, not {}",
                feature_kind.name()
            )));
        }
        Ok(Self {
            rule: AttackRule::Threshold(value),
            feature_kind,
        })
    }

    /// Probability that the instance is a member. Threshold rules output
    /// exactly 0 or 1.
    pub fn member_probability(&self, features: &[f64]) -> Result<f64> {
        match &self.rule {
            AttackRule::Threshold(t) => {
                if features.len() != 1 {
                    return Err(Error::invalid("threshold attacks take one feature"));
                }
                Ok(if features[0] < *t { 1.0 } else { 0.0 })
            }
            AttackRule::Mlp { net, standardizer } => {
                if net.n_classes() != 2 {
                    return Err(Error::invalid("attack network must have two outputs"));
                }
                let z = standardizer.apply(features);
                let row = ArrayView2::from_shape((1, z.len()), &z).expect("row view");
                Ok(net.predict_proba(row, 1.0)?[[0, 1]])
            }
        }
    }

    fn member_probabilities(&self, set: &[AttackInstance]) -> Result<Vec<f64>> {
        match &self.rule {
            AttackRule::Mlp { net, standardizer } if !set.is_empty() => {
                if net.n_classes() != 2 {
                    return Err(Error::invalid("attack network must have two outputs"));
                }
                let dim = standardizer.mean.len();
                let mut flat = Vec::with_capacity(set.len() * dim);
                for inst in set {
                    if inst.features.len() != dim {
                        return Err(Error::invalid("instance dimension differs from the attack model"));
                    }
                    flat.extend(standardizer.apply(&inst.features));
                }
                let x = ArrayView2::from_shape((set.len(), dim), &flat).expect("row-major");
                Ok(net.predict_proba(x, 1.0)?.column(1).to_vec())
            }
            _ => set.iter().map(|i| self.member_probability(&i.features)).collect(),
        }
    }
}

/// Empirical gain: mean `ln h` over members plus mean `ln(1 - h)` over
/// non-members, with `h` clamped to `[1e-12, 1 - 1e-12]`.
pub fn attack_gain(h: &AttackModel, members: &[AttackInstance], nonmembers: &[AttackInstance]) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::invalid("attack gain needs nonempty member and non-member sets"));
    }
    let pm = h.member_probabilities(members)?;
    let pn = h.member_probabilities(nonmembers)?;
    Ok(gain_from_probabilities(&pm, &pn))
}

fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

pub(crate) fn gain_from_probabilities(members: &[f64], nonmembers: &[f64]) -> f64 {
    let a: f64 = members.iter().map(|&p| clamp_probability(p).ln()).sum::<f64>() / members.len() as f64;
    let b: f64 = nonmembers.iter().map(|&p| (1.0 - clamp_probability(p)).ln()).sum::<f64>() / nonmembers.len() as f64;
    a + b
}

/// Result of one attack on a balanced evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub accuracy: f64,
    pub gain: f64,
    pub threshold_used: Option<f64>,
    pub n_members: usize,
    pub n_nonmembers: usize,
}

/// Mean of true-positive and true-negative rates.
pub(crate) fn balanced_accuracy(member_hits: usize, n_members: usize, nonmember_hits: usize, n_nonmembers: usize) -> f64 {
    0.5 * (member_hits as f64 / n_members as f64 + nonmember_hits as f64 / n_nonmembers as f64)
}

pub(crate) fn require_balanced(n_members: usize, n_nonmembers: usize) -> Result<()> {
    if n_members != n_nonmembers {
        return Err(Error::invalid(format!(
            "evaluation sets must be balanced: {n_members} members vs {n_nonmembers} non-members"
        )));
    }
    if n_members == 0 {
        return Err(Error::invalid("evaluation sets are empty"));
    }
    Ok(())
}

/// Scores a model on balanced member and non-member instances; an instance
/// is predicted a member when `h > 0.5`.
pub fn evaluate_attack(model: &AttackModel, members: &AttackSet, nonmembers: &AttackSet) -> Result<AttackReport> {
    if members.kind() != model.feature_kind || nonmembers.kind() != model.feature_kind {
        return Err(Error::invalid("attack sets do not match the model's feature layout"));
    }
    require_balanced(members.len(), nonmembers.len())?;
    let pm = model.member_probabilities(members.instances())?;
    let pn = model.member_probabilities(nonmembers.instances())?;
    let hits_m = pm.iter().filter(|&&p| p > 0.5).count();
    let hits_n = pn.iter().filter(|&&p| p <= 0.5).count();
    Ok(AttackReport {
        accuracy: balanced_accuracy(hits_m, pm.len(), hits_n, pn.len()),
        gain: gain_from_probabilities(&pm, &pn),
        threshold_used: match model.rule {
            AttackRule::Threshold(t) => Some(t),
            AttackRule::Mlp { .. } => None,
        },
        n_members: pm.len(),
        n_nonmembers: pn.len(),
    })
}

/// Whether two datasets share a row: by corpus origin when both carry one,
/// otherwise by exact feature content.
pub fn datasets_overlap(a: &Dataset, b: &Dataset) -> bool {
    if let (Some(oa), Some(ob)) = (a.origin(), b.origin()) {
        let seen: HashSet<usize> = oa.iter().copied().collect();
        return ob.iter().any(|i| seen.contains(i));
    }
    let key = |row: &[f64]| row.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let seen: HashSet<Vec<u64>> = (0..a.len()).map(|i| key(a.row(i))).collect();
    (0..b.len()).any(|i| seen.contains(&key(b.row(i))))
}

pub(crate) fn require_disjoint(pairs: &[(&str, &Dataset, &str, &Dataset)]) -> Result<()> {
    for (na, a, nb, b) in pairs {
        if datasets_overlap(a, b) {
            return Err(Error::invalid(format!("{na} and {nb} overlap")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
