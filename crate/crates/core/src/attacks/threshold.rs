use std::cmp::Ordering;

use super::{balanced_accuracy, gain_from_probabilities, require_balanced, AttackReport};
use crate::data::{Dataset, FeatureKind, FeatureMatrix};
use crate::dmp::entropies;
use crate::error::{Error, Result};
use crate::nncore::{argmax, ln_floor, Mlp};

/// Best threshold for the rule "member iff score < threshold" by balanced
/// accuracy, with the tune accuracy it reaches. Candidates are the
/// midpoints between consecutive distinct scores plus one value below all
/// of them; ties go to the lowest threshold.
pub fn tune_threshold(members: &[f64], nonmembers: &[f64]) -> Result<(f64, f64)> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::invalid("threshold tuning needs members and non-members"));
    }
    let mut scored: Vec<(f64, bool)> = members
        .iter()
        .map(|&s| (s, true))
        .chain(nonmembers.iter().map(|&s| (s, false)))
        .collect();
    if scored.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::invalid("non-finite attack score"));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nm, nn) = (members.len(), nonmembers.len());
    let mut best = (scored[0].0 - 1.0, balanced_accuracy(0, nm, nn, nn));
    let (mut tp, mut fp) = (0, 0);
    for k in 1..=scored.len() {
        if scored[k - 1].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        if k == scored.len() || scored[k].0 == scored[k - 1].0 {
            continue;
        }
        let acc = balanced_accuracy(tp, nm, nn - fp, nn);
        if acc > best.1 {
            best = (0.5 * (scored[k - 1].0 + scored[k].0), acc);
        }
    }
    Ok(best)
}

fn threshold_hits(members: &[f64], nonmembers: &[f64], t: f64) -> (usize, usize) {
    (
        members.iter().filter(|&&s| s < t).count(),
        nonmembers.iter().filter(|&&s| s >= t).count(),
    )
}

fn hard_gain(member_pred: impl Iterator<Item = bool>, nonmember_pred: impl Iterator<Item = bool>) -> f64 {
    let pm: Vec<f64> = member_pred.map(|b| f64::from(u8::from(b))).collect();
    let pn: Vec<f64> = nonmember_pred.map(|b| f64::from(u8::from(b))).collect();
    gain_from_probabilities(&pm, &pn)
}

/// Cross-entropy loss (T = 1) and argmax correctness of every row.
pub(crate) fn losses_and_hits(model: &Mlp, d: &Dataset) -> Result<(Vec<f64>, Vec<bool>)> {
    let p = model.predict_proba(d.features().view(), 1.0)?;
    let mut losses = Vec::with_capacity(d.len());
    let mut hits = Vec::with_capacity(d.len());
    for (row, &y) in p.rows().into_iter().zip(d.labels()) {
        let row = row.as_slice().expect("contiguous row");
        if y >= row.len() {
            return Err(Error::invalid(format!("label {y} out of range for the target model")));
        }
        losses.push(-ln_floor(row[y]));
        hits.push(argmax(row) == y);
    }
    Ok((losses, hits))
}

/// Bounded-loss attack results: the rule chosen on the tune halves and
/// scored on the eval halves, and the plain 0-1 rule scored on the full
/// sets.
#[derive(Debug, Clone, PartialEq)]
pub struct BlReport {
    pub tuned: AttackReport,
    pub zero_one: AttackReport,
}

/// Loss-threshold attack. The first half of each set tunes the rule, the
/// second half evaluates it.
pub fn bl_attack(target: &Mlp, members: &Dataset, nonmembers: &Dataset) -> Result<BlReport> {
    if members.len() < 4 || nonmembers.len() < 4 {
        return Err(Error::invalid("the loss attack needs at least 4 members and 4 non-members"));
    }
    require_balanced(members.len(), nonmembers.len())?;
    let (lm, cm) = losses_and_hits(target, members)?;
    let (ln, cn) = losses_and_hits(target, nonmembers)?;
    let half = lm.len() / 2;
    let n_eval = lm.len() - half;

    let (t, t_acc) = tune_threshold(&lm[..half], &ln[..half])?;
    let zo_acc = balanced_accuracy(
        cm[..half].iter().filter(|&&c| c).count(),
        half,
        cn[..half].iter().filter(|&&c| !c).count(),
        half,
    );
    let tuned = if zo_acc > t_acc {
        let (em, en) = (&cm[half..], &cn[half..]);
        AttackReport {
            accuracy: balanced_accuracy(
                em.iter().filter(|&&c| c).count(),
                n_eval,
                en.iter().filter(|&&c| !c).count(),
                n_eval,
            ),
            gain: hard_gain(em.iter().copied(), en.iter().copied()),
            threshold_used: None,
            n_members: n_eval,
            n_nonmembers: n_eval,
        }
    } else {
        let (em, en) = (&lm[half..], &ln[half..]);
        let (hm, hn) = threshold_hits(em, en, t);
        AttackReport {
            accuracy: balanced_accuracy(hm, n_eval, hn, n_eval),
            gain: hard_gain(em.iter().map(|&s| s < t), en.iter().map(|&s| s < t)),
            threshold_used: Some(t),
            n_members: n_eval,
            n_nonmembers: n_eval,
        }
    };
    let n = lm.len();
    let zero_one = AttackReport {
        accuracy: balanced_accuracy(
            cm.iter().filter(|&&c| c).count(),
            n,
            cn.iter().filter(|&&c| !c).count(),
            n,
        ),
        gain: hard_gain(cm.iter().copied(), cn.iter().copied()),
        threshold_used: None,
        n_members: n,
        n_nonmembers: n,
    };
    Ok(BlReport { tuned, zero_one })
}

/// Binary rows packed 64 bits per word.
struct PackedRows {
    words: usize,
    bits: Vec<u64>,
}

impl PackedRows {
    fn pack(rows: impl Iterator<Item = impl AsRef<[f64]>>, d: usize) -> Self {
        let words = d.div_ceil(64);
        let mut bits = Vec::new();
        for row in rows {
            let start = bits.len();
            bits.resize(start + words, 0u64);
            for (j, &v) in row.as_ref().iter().enumerate() {
                if v == 1.0 {
                    bits[start + j / 64] |= 1 << (j % 64);
                }
            }
        }
        Self { words, bits }
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    fn len(&self) -> usize {
        self.bits.len().checked_div(self.words).unwrap_or(0)
    }
}

/// Number of positions where two binary rows differ.
pub fn hamming_distance(a: &[f64], b: &[f64]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::invalid("rows differ in length"));
    }
    if a.iter().chain(b).any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("Hamming distance needs binary rows"));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count() as u32)
}

/// One target sample of the distance attack.
#[derive(Debug, Clone, PartialEq)]
pub struct DistancePoint {
    pub is_member: bool,
    /// Hamming distance to the nearest reference row.
    pub min_distance: u32,
    /// Index of that row in the reference matrix (lowest index on ties).
    pub nearest_ref: usize,
    /// Protected-model entropy (T = 1) of the nearest reference row.
    pub nearest_ref_entropy: f64,
    /// Protected-model entropy (T = 1) of the target sample.
    pub target_entropy: f64,
}

/// Scores each target sample by its Hamming distance to the nearest
/// reference row (member iff the distance is below a threshold tuned on the
/// first halves, as in [`bl_attack`]) and returns the per-sample trace for
/// all targets, members first.
pub fn adaptive_distance_attack(
    protected: &Mlp,
    x_ref: &FeatureMatrix,
    eval_members: &Dataset,
    eval_nonmembers: &Dataset,
) -> Result<(AttackReport, Vec<DistancePoint>)> {
    if x_ref.kind() != FeatureKind::Binary
        || eval_members.kind() != FeatureKind::Binary
        || eval_nonmembers.kind() != FeatureKind::Binary
    {
        return Err(Error::invalid("the distance attack needs binary features"));
    }
    if x_ref.is_empty() {
        return Err(Error::invalid("reference set is empty"));
    }
    if eval_members.len() < 2 {
        return Err(Error::invalid("the distance attack needs at least 2 members and 2 non-members"));
    }
    require_balanced(eval_members.len(), eval_nonmembers.len())?;
    let d = x_ref.n_features();
    if eval_members.n_features() != d || eval_nonmembers.n_features() != d {
        return Err(Error::invalid("reference and target rows differ in width"));
    }
    let refs = PackedRows::pack((0..x_ref.len()).map(|i| x_ref.row(i)), d);
    let ref_entropy = entropies(protected, x_ref.features().view(), 1.0)?;

    let mut trace = Vec::with_capacity(2 * eval_members.len());
    for (set, is_member) in [(eval_members, true), (eval_nonmembers, false)] {
        let targets = PackedRows::pack((0..set.len()).map(|i| set.row(i)), d);
        let target_entropy = entropies(protected, set.features().view(), 1.0)?;
        for t in 0..targets.len() {
            let row = targets.row(t);
            let (nearest_ref, min_distance) = (0..refs.len())
                .map(|r| {
                    let dist: u32 = row.iter().zip(refs.row(r)).map(|(a, b)| (a ^ b).count_ones()).sum();
                    (r, dist)
                })
                .min_by(|a, b| match a.1.cmp(&b.1) {
                    Ordering::Equal => a.0.cmp(&b.0),
                    o => o,
                })
                .expect("nonempty reference set");
            trace.push(DistancePoint {
                is_member,
                min_distance,
                nearest_ref,
                nearest_ref_entropy: ref_entropy[nearest_ref],
                target_entropy: target_entropy[t],
            });
        }
    }
    let n = eval_members.len();
    let dm: Vec<f64> = trace[..n].iter().map(|p| f64::from(p.min_distance)).collect();
    let dn: Vec<f64> = trace[n..].iter().map(|p| f64::from(p.min_distance)).collect();
    let half = n / 2;
    let (t, _) = tune_threshold(&dm[..half], &dn[..half])?;
    let (em, en) = (&dm[half..], &dn[half..]);
    let (hm, hn) = threshold_hits(em, en, t);
    let report = AttackReport {
        accuracy: balanced_accuracy(hm, em.len(), hn, en.len()),
        gain: hard_gain(em.iter().map(|&s| s < t), en.iter().map(|&s| s < t)),
        threshold_used: Some(t),
        n_members: em.len(),
        n_nonmembers: en.len(),
    };
    Ok((report, trace))
}
