use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    evaluate_attack, require_balanced, require_disjoint, AttackKind, AttackModel, AttackReport, AttackRule,
    AttackSet, BlReport, Standardizer,
};
use crate::attacks::bl_attack;
use crate::data::{Dataset, FeatureKind};
use crate::dmp::train_unprotected;
use crate::error::{Error, Result};
use crate::nncore::{architecture, argmax, ln_floor, per_sample_grad_norms, train, Mlp, TrainConfig};

/// Architecture and recipe of learned attack models.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackTrainConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for AttackTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            train: TrainConfig {
                epochs: 30,
                seed: 11,
                ..TrainConfig::default()
            },
        }
    }
}

/// Trains a two-class network on standardized features (class 1 = member).
pub fn train_attack_model(set: &AttackSet, cfg: &AttackTrainConfig) -> Result<AttackModel> {
    let n_members = set.count_members();
    if n_members == 0 || n_members == set.len() {
        return Err(Error::invalid("attack training needs both members and non-members"));
    }
    let standardizer = Standardizer::fit(set.instances(), set.dim());
    let mut flat = Vec::with_capacity(set.len() * set.dim());
    for inst in set.instances() {
        flat.extend(standardizer.apply(&inst.features));
    }
    let x = Array2::from_shape_vec((set.len(), set.dim()), flat).expect("row-major");
    let labels = set.instances().iter().map(|i| usize::from(i.is_member)).collect();
    let data = Dataset::new(x, labels, 2, FeatureKind::Continuous)?;
    let init = Mlp::new(&architecture(set.dim(), &cfg.hidden, 2), cfg.train.seed)?;
    let net = train(&init, &data, &cfg.train)?.model;
    Ok(AttackModel {
        rule: AttackRule::Mlp { net, standardizer },
        feature_kind: set.kind(),
    })
}

fn sorted_desc(p: &[f64]) -> Vec<f64> {
    let mut v = p.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Target predictions (T = 1) of every row, sorted in descending order.
pub fn sorted_prediction_set(target: &Mlp, data: &Dataset, is_member: bool) -> Result<AttackSet> {
    let p = target.predict_proba(data.features().view(), 1.0)?;
    let rows = p.rows().into_iter().map(|r| sorted_desc(r.as_slice().expect("contiguous"))).collect();
    AttackSet::from_rows(AttackKind::SortedProbs, target.n_classes(), rows, is_member)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NshMode {
    Blackbox,
    Whitebox,
}

impl NshMode {
    fn kind(self) -> AttackKind {
        match self {
            NshMode::Blackbox => AttackKind::NshBlackbox,
            NshMode::Whitebox => AttackKind::NshWhitebox,
        }
    }

    fn dim(self, model: &Mlp) -> usize {
        let base = model.n_classes() + 2;
        match self {
            NshMode::Blackbox => base,
            NshMode::Whitebox => base + model.n_layers() + 1,
        }
    }
}

fn nsh_rows(target: &Mlp, x: ArrayView2<f64>, labels: &[usize], mode: NshMode) -> Result<Vec<Vec<f64>>> {
    let p = target.predict_proba(x, 1.0)?;
    let c = target.n_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    let norms = match mode {
        NshMode::Whitebox => Some(per_sample_grad_norms(target, x, labels)?),
        NshMode::Blackbox => None,
    };
    let mut out = Vec::with_capacity(labels.len());
    for (i, (row, &y)) in p.rows().into_iter().zip(labels).enumerate() {
        let row = row.as_slice().expect("contiguous");
        let mut f = sorted_desc(row);
        f.push(-ln_floor(row[y]));
        f.push(if argmax(row) == y { 1.0 } else { 0.0 });
        if let Some(n) = &norms {
            f.extend(n[i].per_layer.iter().map(|&v| ln_floor(v)));
            f.push(ln_floor(n[i].total));
        }
        out.push(f);
    }
    Ok(out)
}

/// Attack features of one labeled sample: the sorted prediction vector,
/// the cross-entropy loss and a correctness bit; whitebox mode appends the
/// logarithms of the per-layer and total gradient norms.
pub fn nsh_features(target: &Mlp, x: &[f64], y: usize, mode: NshMode) -> Result<Vec<f64>> {
    let row = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    Ok(nsh_rows(target, row, &[y], mode)?.remove(0))
}

/// [`nsh_features`] for every row of `data`.
pub fn nsh_feature_set(target: &Mlp, data: &Dataset, mode: NshMode, is_member: bool) -> Result<AttackSet> {
    let rows = nsh_rows(target, data.features().view(), data.labels(), mode)?;
    AttackSet::from_rows(mode.kind(), mode.dim(target), rows, is_member)
}

/// Shadow-model attack. The first half of `shadow` trains a shadow model
/// with the target's architecture and `recipe`; the second half serves as
/// its non-members. The attack network learns membership from the shadow
/// model's sorted predictions and is scored on the target.
pub fn nn_attack(
    target: &Mlp,
    recipe: &TrainConfig,
    shadow: &Dataset,
    eval_members: &Dataset,
    eval_nonmembers: &Dataset,
    cfg: &AttackTrainConfig,
) -> Result<AttackReport> {
    if shadow.len() < 2 * recipe.batch_size {
        return Err(Error::invalid(format!(
            "shadow data has {} rows, needs at least {} (twice the batch size)",
            shadow.len(),
            2 * recipe.batch_size
        )));
    }
    require_balanced(eval_members.len(), eval_nonmembers.len())?;
    require_disjoint(&[
        ("shadow data", shadow, "evaluation members", eval_members),
        ("shadow data", shadow, "evaluation non-members", eval_nonmembers),
    ])?;
    let half = shadow.len() / 2;
    let (inside, outside) = shadow.split_at(half);
    let outside = outside.head(half);
    let shadow_model = train_unprotected(&target.layer_specs(), &inside, recipe, None)?.model;
    let train_set = sorted_prediction_set(&shadow_model, &inside, true)?
        .concat(sorted_prediction_set(&shadow_model, &outside, false)?)?;
    let model = train_attack_model(&train_set, cfg)?;
    evaluate_attack(
        &model,
        &sorted_prediction_set(target, eval_members, true)?,
        &sorted_prediction_set(target, eval_nonmembers, false)?,
    )
}

/// Attack with knowledge of the target's parameters and of some members
/// and non-members. The known sets are truncated to a common size.
pub fn nsh_attack(
    target: &Mlp,
    known_members: &Dataset,
    known_nonmembers: &Dataset,
    eval_members: &Dataset,
    eval_nonmembers: &Dataset,
    mode: NshMode,
    cfg: &AttackTrainConfig,
) -> Result<AttackReport> {
    require_balanced(eval_members.len(), eval_nonmembers.len())?;
    require_disjoint(&[
        ("known members", known_members, "evaluation members", eval_members),
        ("known members", known_members, "evaluation non-members", eval_nonmembers),
        ("known non-members", known_nonmembers, "evaluation members", eval_members),
        ("known non-members", known_nonmembers, "evaluation non-members", eval_nonmembers),
    ])?;
    let n = known_members.len().min(known_nonmembers.len());
    if n == 0 {
        return Err(Error::invalid("known member and non-member sets must be nonempty"));
    }
    let train_set = nsh_feature_set(target, &known_members.head(n), mode, true)?
        .concat(nsh_feature_set(target, &known_nonmembers.head(n), mode, false)?)?;
    let model = train_attack_model(&train_set, cfg)?;
    evaluate_attack(
        &model,
        &nsh_feature_set(target, eval_members, mode, true)?,
        &nsh_feature_set(target, eval_nonmembers, mode, false)?,
    )
}

/// Attacks that treat the reference rows as the members of the protected
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct RefRiskReport {
    pub bl: BlReport,
    pub blackbox: AttackReport,
    pub whitebox: AttackReport,
}

impl RefRiskReport {
    pub fn max_accuracy(&self) -> f64 {
        [
            self.bl.tuned.accuracy,
            self.bl.zero_one.accuracy,
            self.blackbox.accuracy,
            self.whitebox.accuracy,
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn shuffled(d: &Dataset, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.shuffle(rng);
    idx.truncate(n);
    d.subset(&idx)
}

/// Membership inference against the reference set: the labeled reference
/// rows are members, `holdout` rows non-members. Both are shuffled (seeded
/// by the attack recipe) and truncated to a common size; the loss attack
/// uses all of them, the learned attacks train on the first halves and
/// score the second halves.
pub fn ref_data_mia(
    protected: &Mlp,
    x_ref: &Dataset,
    holdout: &Dataset,
    cfg: &AttackTrainConfig,
) -> Result<RefRiskReport> {
    if holdout.is_empty() {
        return Err(Error::invalid("non-member holdout is empty"));
    }
    let n = x_ref.len().min(holdout.len());
    if n < 8 {
        return Err(Error::invalid("reference attack needs at least 8 members and 8 non-members"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let members = shuffled(x_ref, n, &mut rng);
    let nonmembers = shuffled(holdout, n, &mut rng);
    let bl = bl_attack(protected, &members, &nonmembers)?;
    let (km, em) = members.split_at(n / 2);
    let (kn, en) = nonmembers.split_at(n / 2);
    let blackbox = nsh_attack(protected, &km, &kn, &em, &en, NshMode::Blackbox, cfg)?;
    let whitebox = nsh_attack(protected, &km, &kn, &em, &en, NshMode::Whitebox, cfg)?;
    Ok(RefRiskReport { bl, blackbox, whitebox })
}
