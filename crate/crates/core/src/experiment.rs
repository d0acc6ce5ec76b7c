//! The synthetic desk-scale fixture and the experiments run on it. Shared
//! by the command-line driver and the acceptance tests.

use crate::analysis::{
    correlation_report, ratio_bound, retrain_oracle, stats, CorrelationReport, InfluenceSolver, RatioBound,
};
use crate::attacks::{
    adaptive_distance_attack, bl_attack, nn_attack, nsh_attack, ref_data_mia, AttackReport, AttackTrainConfig,
    BlReport, DistancePoint, NshMode, RefRiskReport,
};
use crate::data::{split, synth_purchase, Dataset, FeatureMatrix, SplitParts, SplitPlan, SynthParams};
use crate::dmp::{distill_from_teacher, select_reference, train_unprotected, DmpConfig, PipelineOutput, Selection};
use crate::error::{Result, StageExt};
use crate::nncore::{architecture, evaluate, LayerSpec, Mlp, TrainConfig};
use crate::report::ExperimentReport;

/// Everything that defines one fixture run.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub synth: SynthParams,
    pub plan: SplitPlan,
    pub hidden: Vec<usize>,
    pub dmp: DmpConfig,
    pub attack: AttackTrainConfig,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            synth: SynthParams::default(),
            plan: SplitPlan::default(),
            hidden: vec![128],
            dmp: DmpConfig::default(),
            attack: AttackTrainConfig::default(),
        }
    }
}

impl FixtureConfig {
    /// Shifts every seed by `offset` (data, split, teacher, student and
    /// attack models).
    pub fn reseeded(&self, offset: u64) -> Self {
        let mut c = self.clone();
        c.synth.seed = c.synth.seed.wrapping_add(offset);
        c.plan.seed = c.plan.seed.wrapping_add(offset);
        c.dmp.teacher_train.seed = c.dmp.teacher_train.seed.wrapping_add(offset);
        c.dmp.student_train.seed = c.dmp.student_train.seed.wrapping_add(offset);
        c.attack.train.seed = c.attack.train.seed.wrapping_add(offset);
        c
    }
}

/// A generated and split corpus.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub cfg: FixtureConfig,
    pub parts: SplitParts,
    pub arch: Vec<LayerSpec>,
}

impl Fixture {
    pub fn build(cfg: FixtureConfig) -> Result<Self> {
        let corpus = synth_purchase(&cfg.synth).stage("synth-data")?;
        let parts = split(&corpus, &cfg.plan).stage("split")?;
        let arch = architecture(cfg.synth.n_features, &cfg.hidden, cfg.synth.n_classes);
        Ok(Self { cfg, parts, arch })
    }

    /// The unlabeled reference pool.
    pub fn pool(&self) -> FeatureMatrix {
        self.parts.x_ref_pool.unlabeled()
    }

    pub fn train_teacher(&self) -> Result<Mlp> {
        Ok(train_unprotected(&self.arch, &self.parts.d_tr, &self.cfg.dmp.teacher_train, None)
            .stage("pre-distillation")?
            .model)
    }

    /// Distills `teacher` with `dmp` in place of the fixture's own settings.
    pub fn distill(&self, teacher: &Mlp, dmp: &DmpConfig) -> Result<PipelineOutput> {
        distill_from_teacher(teacher.clone(), &self.arch, &self.parts.d_tr, &self.pool(), &self.parts.d_test, dmp)
    }
}

/// Accuracy of every attack against one model.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSuite {
    pub bl: BlReport,
    pub nn: AttackReport,
    pub blackbox: AttackReport,
    pub whitebox: AttackReport,
}

impl AttackSuite {
    /// `(metric, accuracy)` for each attack; `a_bl` is the tuned loss
    /// attack, `a_bl01` its 0-1 variant.
    pub fn accuracies(&self) -> [(&'static str, f64); 5] {
        [
            ("a_bl", self.bl.tuned.accuracy),
            ("a_bl01", self.bl.zero_one.accuracy),
            ("a_nn", self.nn.accuracy),
            ("a_bb", self.blackbox.accuracy),
            ("a_wb", self.whitebox.accuracy),
        ]
    }

    pub fn push_to(&self, report: &mut ExperimentReport, experiment_id: &str) {
        for (m, v) in self.accuracies() {
            report.push(experiment_id, m, v);
        }
    }
}

/// Runs all attacks against `target`. The shadow model of the NN attack is
/// trained with the teacher recipe.
pub fn attack_suite(fx: &Fixture, target: &Mlp) -> Result<AttackSuite> {
    let p = &fx.parts;
    let bl = bl_attack(target, &p.eval_members, &p.eval_nonmembers).stage("bl-attack")?;
    let nn = nn_attack(
        target,
        &fx.cfg.dmp.teacher_train,
        &p.shadow,
        &p.eval_members,
        &p.eval_nonmembers,
        &fx.cfg.attack,
    )
    .stage("nn-attack")?;
    let nsh = |mode| {
        nsh_attack(
            target,
            &p.attack_members_known,
            &p.attack_nonmembers_known,
            &p.eval_members,
            &p.eval_nonmembers,
            mode,
            &fx.cfg.attack,
        )
        .stage("nsh-attack")
    };
    Ok(AttackSuite {
        bl,
        nn,
        blackbox: nsh(NshMode::Blackbox)?,
        whitebox: nsh(NshMode::Whitebox)?,
    })
}

/// No-defense versus DMP on one fixture.
#[derive(Debug, Clone)]
pub struct MainResult {
    pub pipeline: PipelineOutput,
    pub undefended: AttackSuite,
    pub protected: AttackSuite,
    /// Pipeline metrics plus attack accuracies for `no_defense` and `dmp`.
    pub report: ExperimentReport,
}

pub fn main_experiment(fx: &Fixture) -> Result<MainResult> {
    let teacher = fx.train_teacher()?;
    let pipeline = fx.distill(&teacher, &fx.cfg.dmp)?;
    let undefended = attack_suite(fx, &pipeline.unprotected)?;
    let protected = attack_suite(fx, &pipeline.protected)?;
    let mut report = pipeline.report.clone();
    undefended.push_to(&mut report, "no_defense");
    protected.push_to(&mut report, "dmp");
    Ok(MainResult {
        pipeline,
        undefended,
        protected,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketResult {
    pub bucket: usize,
    pub mean_entropy: f64,
    pub a_test: f64,
    pub a_bl: f64,
}

/// One student per entropy bucket of the pool.
pub fn entropy_sweep(fx: &Fixture, teacher: &Mlp, n_buckets: usize) -> Result<Vec<BucketResult>> {
    (0..n_buckets)
        .map(|bucket| {
            let dmp = DmpConfig {
                selection: Selection::EntropyBucket {
                    index: bucket,
                    n_buckets,
                },
                ..fx.cfg.dmp.clone()
            };
            let out = fx.distill(teacher, &dmp)?;
            let a_bl = bl_attack(&out.protected, &fx.parts.eval_members, &fx.parts.eval_nonmembers)?;
            Ok(BucketResult {
                bucket,
                mean_entropy: out.selection.mean_entropy(),
                a_test: out.report.get("dmp", "a_test").expect("pipeline metric"),
                a_bl: a_bl.tuned.accuracy,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureResult {
    pub teacher_temperature: f64,
    pub a_train: f64,
    pub a_test: f64,
    pub e_gen: f64,
    pub a_wb: f64,
}

/// One student per teacher temperature, with the student temperature held
/// at `student_temperature`.
pub fn temperature_sweep(
    fx: &Fixture,
    teacher: &Mlp,
    temperatures: &[f64],
    student_temperature: f64,
) -> Result<Vec<TemperatureResult>> {
    temperatures
        .iter()
        .map(|&t| {
            let dmp = DmpConfig {
                teacher_temperature: t,
                student_temperature,
                ..fx.cfg.dmp.clone()
            };
            let out = fx.distill(teacher, &dmp)?;
            let p = &fx.parts;
            let wb = nsh_attack(
                &out.protected,
                &p.attack_members_known,
                &p.attack_nonmembers_known,
                &p.eval_members,
                &p.eval_nonmembers,
                NshMode::Whitebox,
                &fx.cfg.attack,
            )?;
            let get = |m| out.report.get("dmp", m).expect("pipeline metric");
            Ok(TemperatureResult {
                teacher_temperature: t,
                a_train: get("a_train"),
                a_test: get("a_test"),
                e_gen: get("e_gen"),
                a_wb: wb.accuracy,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefSizeResult {
    pub ref_size: usize,
    pub a_test: f64,
    pub a_bl: f64,
}

/// One student per reference-set size (lowest-entropy selection).
pub fn refsize_sweep(fx: &Fixture, teacher: &Mlp, sizes: &[usize]) -> Result<Vec<RefSizeResult>> {
    sizes
        .iter()
        .map(|&ref_size| {
            let dmp = DmpConfig {
                ref_size,
                selection: Selection::LowestEntropy,
                ..fx.cfg.dmp.clone()
            };
            let out = fx.distill(teacher, &dmp)?;
            let a_bl = bl_attack(&out.protected, &fx.parts.eval_members, &fx.parts.eval_nonmembers)?;
            Ok(RefSizeResult {
                ref_size,
                a_test: out.report.get("dmp", "a_test").expect("pipeline metric"),
                a_bl: a_bl.tuned.accuracy,
            })
        })
        .collect()
}

/// Labeled reference rows (validation only) and a non-member holdout drawn
/// by the same entropy criterion from the shadow partition, so members and
/// non-members share a distribution.
/// `ref_indices` are the pool rows the student was distilled on.
pub fn reference_membership_sets(fx: &Fixture, teacher: &Mlp, ref_indices: &[usize]) -> Result<(Dataset, Dataset)> {
    if ref_indices.iter().any(|&i| i >= fx.parts.x_ref_pool.len()) {
        return Err(crate::Error::InvalidInput("reference index out of range for the pool".into()));
    }
    let x_ref = fx.parts.x_ref_pool.subset(ref_indices);
    let shadow = &fx.parts.shadow;
    let frac = ref_indices.len() as f64 / fx.parts.x_ref_pool.len() as f64;
    let n_hold = ((shadow.len() as f64 * frac).round() as usize).clamp(1, shadow.len());
    let dmp = DmpConfig {
        ref_size: n_hold,
        selection: Selection::LowestEntropy,
        ..fx.cfg.dmp.clone()
    };
    let hold = select_reference(&shadow.unlabeled(), teacher, &dmp)?;
    Ok((x_ref, shadow.subset(&hold.indices)))
}

/// Reference-data attacks on the DMP student and on a control model trained
/// with cross-entropy directly on the labeled reference rows.
#[derive(Debug, Clone)]
pub struct RefRiskResult {
    pub dmp: RefRiskReport,
    pub control: RefRiskReport,
}

pub fn ref_risk(fx: &Fixture, teacher: &Mlp, protected: &Mlp, ref_indices: &[usize]) -> Result<RefRiskResult> {
    let (x_ref, holdout) = reference_membership_sets(fx, teacher, ref_indices)?;
    let dmp = ref_data_mia(protected, &x_ref, &holdout, &fx.cfg.attack).stage("ref-risk")?;
    let control_model = train_unprotected(&fx.arch, &x_ref, &fx.cfg.dmp.teacher_train, None)
        .stage("ref-risk control")?
        .model;
    let control = ref_data_mia(&control_model, &x_ref, &holdout, &fx.cfg.attack).stage("ref-risk control")?;
    Ok(RefRiskResult { dmp, control })
}

/// Distance attack on the DMP student using its actual reference rows.
pub fn adaptive(fx: &Fixture, protected: &Mlp, ref_indices: &[usize]) -> Result<(AttackReport, Vec<DistancePoint>)> {
    if ref_indices.iter().any(|&i| i >= fx.parts.x_ref_pool.len()) {
        return Err(crate::Error::InvalidInput("reference index out of range for the pool".into()));
    }
    adaptive_distance_attack(
        protected,
        &fx.pool().select(ref_indices),
        &fx.parts.eval_members,
        &fx.parts.eval_nonmembers,
    )
    .stage("adaptive")
}

/// Train and test accuracy of a model on the fixture.
pub fn accuracies(fx: &Fixture, model: &Mlp) -> Result<(f64, f64)> {
    Ok((
        evaluate(model, &fx.parts.d_tr, 1.0)?.accuracy,
        evaluate(model, &fx.parts.d_test, 1.0)?.accuracy,
    ))
}

/// Leave-one-out check of the KL bound on the default fixture.
#[derive(Debug, Clone)]
pub struct TheoryResult {
    pub bound: RatioBound,
    pub correlations: CorrelationReport,
}

/// Retrains the teacher without `removed_index` and evaluates the bound for
/// the protected model over the first `n_rows` labeled pool rows.
pub fn theory_check(fx: &Fixture, protected: &Mlp, removed_index: usize, n_rows: usize) -> Result<TheoryResult> {
    let pair = retrain_oracle(&fx.arch, &fx.parts.d_tr, removed_index, &fx.cfg.dmp.teacher_train).stage("retrain oracle")?;
    let rows = fx.parts.x_ref_pool.head(n_rows.min(fx.parts.x_ref_pool.len()));
    let bound = ratio_bound(&pair, protected, &rows, fx.cfg.dmp.teacher_temperature).stage("ratio bound")?;
    let correlations = correlation_report(&bound.trace).stage("correlation")?;
    Ok(TheoryResult { bound, correlations })
}

/// A small task on which the explicit Hessian is affordable.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceCheckConfig {
    pub synth: SynthParams,
    pub n_train: usize,
    pub n_probes: usize,
    pub hidden: Vec<usize>,
    pub removed_index: usize,
    pub damping: f64,
    pub train: TrainConfig,
}

impl Default for InfluenceCheckConfig {
    fn default() -> Self {
        Self {
            synth: SynthParams {
                n_samples: 400,
                n_features: 20,
                n_classes: 4,
                cluster_noise: 0.3,
                seed: 21,
            },
            n_train: 100,
            n_probes: 20,
            hidden: vec![],
            removed_index: 0,
            damping: 1e-3,
            train: TrainConfig {
                epochs: 2000,
                batch_size: 100,
                learning_rate: 0.01,
                weight_decay: 1e-3,
                seed: 22,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceCheckResult {
    pub n_params: usize,
    /// Influence estimate of the removed sample on each probe.
    pub influence: Vec<f64>,
    /// Retrain-oracle loss change on each probe.
    pub delta_ce: Vec<f64>,
    pub pearson: f64,
}

/// Compares influence estimates with leave-one-out retraining on held-out
/// probe rows.
pub fn influence_check(cfg: &InfluenceCheckConfig) -> Result<InfluenceCheckResult> {
    let data = synth_purchase(&cfg.synth).stage("synth-data")?;
    if cfg.n_train + cfg.n_probes > data.len() {
        return Err(crate::Error::InvalidInput("influence check needs more samples".into()));
    }
    let (d_tr, rest) = data.split_at(cfg.n_train);
    let probes = rest.head(cfg.n_probes);
    let arch = architecture(cfg.synth.n_features, &cfg.hidden, cfg.synth.n_classes);
    let pair = retrain_oracle(&arch, &d_tr, cfg.removed_index, &cfg.train).stage("retrain oracle")?;
    let trace = ratio_bound(&pair, &pair.full, &probes, 1.0).stage("ratio bound")?.trace;
    let solver = InfluenceSolver::new(&pair.full, &d_tr, cfg.damping).stage("influence")?;
    let z = (d_tr.row(cfg.removed_index), d_tr.labels()[cfg.removed_index]);
    let influence = (0..probes.len())
        .map(|i| solver.influence(z, (probes.row(i), probes.labels()[i])))
        .collect::<Result<Vec<_>>>()
        .stage("influence")?;
    let pearson = stats::pearson(&influence, &trace.delta_ce).stage("correlation")?;
    Ok(InfluenceCheckResult {
        n_params: pair.full.n_params(),
        influence,
        delta_ce: trace.delta_ce,
        pearson,
    })
}
