//! The three-phase distillation defense.
//!
//! 1. Train an unprotected teacher on the private training set.
//! 2. Pick reference rows by teacher prediction entropy and label them with
//!    the teacher's temperature-scaled predictions.
//! 3. Train the protected student on those soft labels only.

use std::cmp::Ordering;

use ndarray::{s, ArrayView2};

use crate::data::{Dataset, FeatureMatrix, SoftLabelSet};
use crate::error::{Error, Result, StageExt};
use crate::nncore::{
    check_temperature, entropy, evaluate, softmax_rows, train, validate_architecture, LayerSpec, LossKind, Mlp,
    Optimizer, TrainConfig, TrainOutcome, EVAL_CHUNK,
};
use crate::report::ExperimentReport;

/// How reference rows are chosen from the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// The `ref_size` rows with the lowest teacher entropy.
    LowestEntropy,
    /// The `index`-th of `n_buckets` equal contiguous slices of the pool
    /// sorted by entropy.
    EntropyBucket { index: usize, n_buckets: usize },
    /// The whole pool.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmpConfig {
    pub teacher_temperature: f64,
    /// Temperature applied to the student's logits during distillation.
    /// Overrides `student_train.temperature`.
    pub student_temperature: f64,
    pub ref_size: usize,
    pub selection: Selection,
    pub teacher_train: TrainConfig,
    pub student_train: TrainConfig,
}

impl Default for DmpConfig {
    fn default() -> Self {
        Self {
            teacher_temperature: 1.0,
            student_temperature: 1.0,
            ref_size: 10_000,
            selection: Selection::LowestEntropy,
            teacher_train: TrainConfig {
                epochs: 25,
                seed: 1,
                ..TrainConfig::default()
            },
            student_train: TrainConfig {
                epochs: 25,
                learning_rate: 0.1,
                optimizer: Optimizer::Sgd,
                seed: 2,
                loss: LossKind::KlDivergence,
                ..TrainConfig::default()
            },
        }
    }
}

impl DmpConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.teacher_temperature)?;
        check_temperature(self.student_temperature)?;
        if self.ref_size == 0 {
            return Err(Error::invalid("ref_size must be positive"));
        }
        if self.student_train.loss != LossKind::KlDivergence {
            return Err(Error::invalid("the student must be trained with the kl_divergence loss"));
        }
        if self.teacher_train.loss != LossKind::CrossEntropy {
            return Err(Error::invalid("the teacher must be trained with the cross_entropy loss"));
        }
        if let Selection::EntropyBucket { index, n_buckets } = self.selection {
            if n_buckets == 0 || index >= n_buckets {
                return Err(Error::invalid(format!(
                    "entropy bucket {index} out of range for {n_buckets} buckets"
                )));
            }
        }
        self.teacher_train.validate()?;
        self.student_train.validate()
    }
}

/// An unprotected model with its train (and optional test) accuracy.
#[derive(Debug, Clone)]
pub struct Unprotected {
    pub model: Mlp,
    pub a_train: f64,
    pub a_test: Option<f64>,
}

/// Pre-distillation phase: plain (regularized) cross-entropy training.
/// The initial weights are seeded with `cfg.seed`.
pub fn train_unprotected(
    arch: &[LayerSpec],
    d_tr: &Dataset,
    cfg: &TrainConfig,
    d_test: Option<&Dataset>,
) -> Result<Unprotected> {
    if d_tr.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.loss != LossKind::CrossEntropy {
        return Err(Error::invalid("the unprotected model is trained with cross_entropy"));
    }
    let init = Mlp::new(arch, cfg.seed)?;
    let model = train(&init, d_tr, cfg)?.model;
    let a_train = evaluate(&model, d_tr, 1.0)?.accuracy;
    let a_test = d_test.map(|d| evaluate(&model, d, 1.0)).transpose()?.map(|e| e.accuracy);
    Ok(Unprotected { model, a_train, a_test })
}

/// Shannon entropy (nats) of `softmax(model(x) / temperature)`.
pub fn prediction_entropy(model: &Mlp, x: &[f64], temperature: f64) -> Result<f64> {
    let row = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    Ok(entropies(model, row, temperature)?[0])
}

/// [`prediction_entropy`] for every row.
pub fn entropies(model: &Mlp, x: ArrayView2<f64>, temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    model.check_batch(x, None)?;
    let mut out = Vec::with_capacity(x.nrows());
    for start in (0..x.nrows()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(x.nrows());
        let mut p = model.logits_unchecked(x.slice(s![start..end, ..]));
        softmax_rows(&mut p, temperature);
        out.extend(p.rows().into_iter().map(|r| entropy(r.as_slice().expect("contiguous"))));
    }
    Ok(out)
}

/// Chosen reference rows plus the entropy of every pool row.
#[derive(Debug, Clone)]
pub struct ReferenceSelection {
    pub features: FeatureMatrix,
    /// Pool indices of the chosen rows, in ascending entropy order.
    pub indices: Vec<usize>,
    /// Teacher entropy of every pool row, indexed like the pool.
    pub pool_entropies: Vec<f64>,
}

impl ReferenceSelection {
    pub fn mean_entropy(&self) -> f64 {
        let sum: f64 = self.indices.iter().map(|&i| self.pool_entropies[i]).sum();
        sum / self.indices.len() as f64
    }
}

/// Pool indices sorted by ascending entropy, ties broken by index.
pub fn entropy_order(entropies: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..entropies.len()).collect();
    order.sort_by(|&a, &b| match entropies[a].total_cmp(&entropies[b]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order
}

/// Entropy-based reference selection, scored at the teacher temperature.
pub fn select_reference(pool: &FeatureMatrix, teacher: &Mlp, cfg: &DmpConfig) -> Result<ReferenceSelection> {
    if pool.is_empty() {
        return Err(Error::invalid("reference pool is empty"));
    }
    let pool_entropies = entropies(teacher, pool.features().view(), cfg.teacher_temperature)?;
    let order = entropy_order(&pool_entropies);
    let indices = match cfg.selection {
        Selection::All => order,
        Selection::LowestEntropy => {
            if cfg.ref_size > pool.len() {
                return Err(Error::invalid(format!(
                    "ref_size {} exceeds the pool size {}",
                    cfg.ref_size,
                    pool.len()
                )));
            }
            order[..cfg.ref_size].to_vec()
        }
        Selection::EntropyBucket { index, n_buckets } => {
            if n_buckets == 0 || index >= n_buckets {
                return Err(Error::invalid(format!(
                    "entropy bucket {index} out of range for {n_buckets} buckets"
                )));
            }
            let width = pool.len() / n_buckets;
            if width == 0 {
                return Err(Error::invalid("more buckets than pool rows"));
            }
            order[index * width..(index + 1) * width].to_vec()
        }
    };
    Ok(ReferenceSelection {
        features: pool.select(&indices),
        indices,
        pool_entropies,
    })
}

/// Labels every reference row with `softmax(teacher(x) / temperature)`.
pub fn make_soft_labels(teacher: &Mlp, x_ref: &FeatureMatrix, temperature: f64) -> Result<SoftLabelSet> {
    check_temperature(temperature)?;
    let soft = teacher.predict_proba(x_ref.features().view(), temperature)?;
    SoftLabelSet::new(x_ref.features().clone(), soft, temperature)
}

/// Post-distillation phase: trains a fresh student of `student_arch` on the
/// soft labels with the KL loss at the student temperature. The student's
/// initial weights are seeded with `cfg.student_train.seed`.
pub fn distill(student_arch: &[LayerSpec], soft: &SoftLabelSet, cfg: &DmpConfig) -> Result<TrainOutcome> {
    validate_architecture(student_arch)?;
    if soft.is_empty() {
        return Err(Error::invalid("soft-label set is empty"));
    }
    let out_dim = student_arch[student_arch.len() - 1].output_dim;
    if out_dim != soft.n_classes() {
        return Err(Error::invalid(format!(
            "student outputs {out_dim} classes, soft labels have {}",
            soft.n_classes()
        )));
    }
    if student_arch[0].input_dim != soft.inputs().ncols() {
        return Err(Error::invalid(format!(
            "student expects {} features, reference rows have {}",
            student_arch[0].input_dim,
            soft.inputs().ncols()
        )));
    }
    cfg.validate()?;
    let tc = TrainConfig {
        temperature: cfg.student_temperature,
        ..cfg.student_train.clone()
    };
    let init = Mlp::new(student_arch, tc.seed)?;
    train(&init, soft, &tc)
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub unprotected: Mlp,
    pub protected: Mlp,
    pub selection: ReferenceSelection,
    pub soft_labels: SoftLabelSet,
    /// `a_train`, `a_test`, `e_gen` for the experiments `no_defense` and
    /// `dmp`, plus `mean_ref_entropy` for `dmp`.
    pub report: ExperimentReport,
}

/// Trains the teacher, then distills it; see [`distill_from_teacher`].
pub fn run_pipeline(
    arch: &[LayerSpec],
    d_tr: &Dataset,
    pool: &FeatureMatrix,
    d_test: &Dataset,
    cfg: &DmpConfig,
) -> Result<PipelineOutput> {
    cfg.validate().stage("config")?;
    if pool.n_features() != d_tr.n_features() || d_test.n_features() != d_tr.n_features() {
        return Err(Error::invalid("training, pool and test features differ in width").in_stage("config"));
    }
    let teacher = train_unprotected(arch, d_tr, &cfg.teacher_train, None)
        .stage("pre-distillation")?
        .model;
    distill_from_teacher(teacher, arch, d_tr, pool, d_test, cfg)
}

/// Selection, soft labelling and distillation on an already trained
/// teacher. `d_tr` is only used to measure accuracies.
pub fn distill_from_teacher(
    teacher: Mlp,
    student_arch: &[LayerSpec],
    d_tr: &Dataset,
    pool: &FeatureMatrix,
    d_test: &Dataset,
    cfg: &DmpConfig,
) -> Result<PipelineOutput> {
    let selection = select_reference(pool, &teacher, cfg).stage("selection")?;
    let soft_labels =
        make_soft_labels(&teacher, &selection.features, cfg.teacher_temperature).stage("soft-labels")?;
    let protected = distill(student_arch, &soft_labels, cfg).stage("post-distillation")?.model;

    let mut report = ExperimentReport::new();
    for (id, model) in [("no_defense", &teacher), ("dmp", &protected)] {
        let a_train = evaluate(model, d_tr, 1.0).stage("evaluation")?.accuracy;
        let a_test = evaluate(model, d_test, 1.0).stage("evaluation")?.accuracy;
        report.push(id, "a_train", a_train);
        report.push(id, "a_test", a_test);
        report.push(id, "e_gen", a_train - a_test);
    }
    report.push("dmp", "mean_ref_entropy", selection.mean_entropy());
    Ok(PipelineOutput {
        unprotected: teacher,
        protected,
        selection,
        soft_labels,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureKind;
    use crate::nncore::{architecture, Activation};
    use ndarray::{Array1, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zero_model(d: usize, c: usize) -> Mlp {
        Mlp::zeros(&architecture(d, &[], c)).unwrap()
    }

    fn random_binary(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || f64::from(u8::from(rng.random::<bool>())))
    }

    #[test]
    fn entropy_examples() {
        let uniform = zero_model(3, 100);
        let h = prediction_entropy(&uniform, &[1.0, 0.0, 1.0], 1.0).unwrap();
        assert!((h - 100f64.ln()).abs() < 1e-12);
        assert!((h - 4.6052).abs() < 1e-4);

        let spec = [LayerSpec::new(1, 3, Activation::Identity)];
        let sharp = Mlp::from_parts(&spec, vec![Array2::zeros((3, 1))], vec![Array1::from(vec![500.0, 0.0, 0.0])])
            .unwrap();
        assert!(prediction_entropy(&sharp, &[0.0], 1.0).unwrap() <= 1e-6);
        assert!(prediction_entropy(&sharp, &[0.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn higher_temperature_flattens(bias in proptest::collection::vec(-5.0f64..5.0, 2..12)) {
            let c = bias.len();
            let spec = [LayerSpec::new(1, c, Activation::Identity)];
            let m = Mlp::from_parts(&spec, vec![Array2::zeros((c, 1))], vec![Array1::from(bias)]).unwrap();
            let h1 = prediction_entropy(&m, &[0.0], 1.0).unwrap();
            let h4 = prediction_entropy(&m, &[0.0], 4.0).unwrap();
            prop_assert!(h4 >= h1 - 1e-12);
            prop_assert!(h4 <= (c as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn entropy_order_breaks_ties_by_index() {
        assert_eq!(entropy_order(&[0.3, 0.1, 0.3, 0.1]), vec![1, 3, 0, 2]);
    }

    fn trained_teacher() -> (Dataset, Mlp) {
        // Random labels on random rows: the teacher can only memorize.
        let x = random_binary(40, 24, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = (0..40).map(|_| rng.random_range(0..4)).collect();
        let d = Dataset::new(x, y, 4, FeatureKind::Binary).unwrap();
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 8,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let teacher = train_unprotected(&architecture(24, &[32], 4), &d, &cfg, None).unwrap();
        assert_eq!(teacher.a_train, 1.0);
        (d, teacher.model)
    }

    /// Hidden unit k fires (value 1) only on training row k exactly and
    /// votes for its label with weight `margin`.
    fn memorizer(d: &Dataset, margin: f64) -> Mlp {
        let (n, f, c) = (d.len(), d.n_features(), d.n_classes());
        let w1 = d.features().mapv(|v| 2.0 * v - 1.0);
        let b1 = Array1::from_iter((0..n).map(|k| 1.0 - d.row(k).iter().sum::<f64>()));
        let mut w2 = Array2::zeros((c, n));
        for (k, &y) in d.labels().iter().enumerate() {
            w2[[y, k]] = margin;
        }
        Mlp::from_parts(&architecture(f, &[n], c), vec![w1, w2], vec![b1, Array1::zeros(c)]).unwrap()
    }

    #[test]
    fn memorized_member_in_the_pool_is_selected_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = (0..50).map(|_| rng.random_range(0..10)).collect();
        let d = Dataset::new(random_binary(50, 64, 1), y, 10, FeatureKind::Binary).unwrap();
        let teacher = memorizer(&d, 30.0);
        assert_eq!(evaluate(&teacher, &d, 1.0).unwrap().accuracy, 1.0);
        let mut rows = random_binary(200, 64, 7);
        rows.row_mut(37).assign(&d.features().row(11));
        let pool = FeatureMatrix::new(rows, FeatureKind::Binary).unwrap();
        let cfg = DmpConfig {
            ref_size: 5,
            ..DmpConfig::default()
        };
        let sel = select_reference(&pool, &teacher, &cfg).unwrap();
        assert_eq!(sel.indices[0], 37);
        assert_eq!(sel.features.row(0), d.row(11));
        assert!(sel.pool_entropies[37] < 1e-9);
        assert!((sel.pool_entropies[0] - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn full_size_selection_is_the_sorted_pool() {
        let (_, teacher) = trained_teacher();
        let pool = FeatureMatrix::new(random_binary(30, 24, 8), FeatureKind::Binary).unwrap();
        let cfg = DmpConfig {
            ref_size: 30,
            ..DmpConfig::default()
        };
        let sel = select_reference(&pool, &teacher, &cfg).unwrap();
        assert_eq!(sel.indices, entropy_order(&sel.pool_entropies));
        let all = select_reference(&pool, &teacher, &DmpConfig { selection: Selection::All, ..cfg.clone() }).unwrap();
        assert_eq!(all.indices, sel.indices);
        let too_many = DmpConfig { ref_size: 31, ..cfg };
        assert!(select_reference(&pool, &teacher, &too_many).is_err());
    }

    #[test]
    fn buckets_have_increasing_mean_entropy() {
        let (_, teacher) = trained_teacher();
        let pool = FeatureMatrix::new(random_binary(10_000, 24, 12), FeatureKind::Binary).unwrap();
        let mut last = f64::NEG_INFINITY;
        for index in 0..5 {
            let cfg = DmpConfig {
                selection: Selection::EntropyBucket { index, n_buckets: 5 },
                ..DmpConfig::default()
            };
            let sel = select_reference(&pool, &teacher, &cfg).unwrap();
            assert_eq!(sel.indices.len(), 2000);
            assert!(sel.mean_entropy() > last);
            last = sel.mean_entropy();
        }
        let bad = DmpConfig {
            selection: Selection::EntropyBucket { index: 5, n_buckets: 5 },
            ..DmpConfig::default()
        };
        assert!(matches!(select_reference(&pool, &teacher, &bad), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn soft_label_examples() {
        let (_, teacher) = trained_teacher();
        let x = FeatureMatrix::new(random_binary(50, 24, 4), FeatureKind::Binary).unwrap();
        let hot = make_soft_labels(&teacher, &x, 1e9).unwrap();
        assert!(hot.soft_labels().iter().all(|p| (p - 0.25).abs() < 1e-5));
        assert_eq!(hot.teacher_temperature(), 1e9);
        let mut last = -1.0;
        for t in [1.0, 2.0, 4.0, 8.0] {
            let s = make_soft_labels(&teacher, &x, t).unwrap();
            for row in s.soft_labels().rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
            let mean: f64 = s
                .soft_labels()
                .rows()
                .into_iter()
                .map(|r| entropy(r.as_slice().unwrap()))
                .sum::<f64>()
                / 50.0;
            assert!(mean > last);
            last = mean;
        }
    }

    #[test]
    fn self_distillation_agrees_with_the_teacher() {
        let (_, teacher) = trained_teacher();
        let x = FeatureMatrix::new(random_binary(400, 24, 21), FeatureKind::Binary).unwrap();
        let soft = make_soft_labels(&teacher, &x, 1.0).unwrap();
        let cfg = DmpConfig {
            student_train: TrainConfig {
                epochs: 200,
                learning_rate: 0.01,
                optimizer: Optimizer::default(),
                loss: LossKind::KlDivergence,
                ..TrainConfig::default()
            },
            ..DmpConfig::default()
        };
        let student = distill(&teacher.layer_specs(), &soft, &cfg).unwrap().model;
        let a = teacher.predict_proba(x.features().view(), 1.0).unwrap();
        let b = student.predict_proba(x.features().view(), 1.0).unwrap();
        let agree = a
            .rows()
            .into_iter()
            .zip(b.rows())
            .filter(|(p, q)| crate::nncore::argmax(p.as_slice().unwrap()) == crate::nncore::argmax(q.as_slice().unwrap()))
            .count();
        assert!(agree as f64 / 400.0 >= 0.95, "agreement {agree}/400");
    }

    #[test]
    fn distill_rejects_bad_shapes() {
        let soft = SoftLabelSet::new(Array2::zeros((2, 3)), Array2::from_elem((2, 2), 0.5), 1.0).unwrap();
        let cfg = DmpConfig::default();
        assert!(matches!(distill(&[], &soft, &cfg), Err(Error::InvalidInput(_))));
        assert!(matches!(distill(&architecture(3, &[4], 5), &soft, &cfg), Err(Error::InvalidInput(_))));
        assert!(matches!(distill(&architecture(4, &[4], 2), &soft, &cfg), Err(Error::InvalidInput(_))));
        let empty = SoftLabelSet::new(Array2::zeros((0, 3)), Array2::zeros((0, 2)), 1.0).unwrap();
        assert!(matches!(distill(&architecture(3, &[], 2), &empty, &cfg), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pipeline_stage_errors_are_named() {
        let d = Dataset::new(random_binary(10, 4, 1), vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 2, FeatureKind::Binary)
            .unwrap();
        let pool = FeatureMatrix::new(random_binary(3, 4, 2), FeatureKind::Binary).unwrap();
        let cfg = DmpConfig {
            ref_size: 5,
            ..DmpConfig::default()
        };
        let err = run_pipeline(&architecture(4, &[], 2), &d, &pool, &d, &cfg).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "selection", .. }), "{err}");
        let bad = DmpConfig {
            student_temperature: -1.0,
            ..DmpConfig::default()
        };
        let err = run_pipeline(&architecture(4, &[], 2), &d, &pool, &d, &bad).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "config", .. }), "{err}");
    }

    #[test]
    fn small_pipeline_is_deterministic_and_bounded() {
        let (d, _) = trained_teacher();
        let pool = FeatureMatrix::new(random_binary(80, 24, 6), FeatureKind::Binary).unwrap();
        let cfg = DmpConfig {
            ref_size: 40,
            teacher_train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            student_train: TrainConfig {
                epochs: 10,
                ..DmpConfig::default().student_train
            },
            ..DmpConfig::default()
        };
        let arch = architecture(24, &[16], 4);
        let a = run_pipeline(&arch, &d, &pool, &d, &cfg).unwrap();
        let b = run_pipeline(&arch, &d, &pool, &d, &cfg).unwrap();
        assert_eq!(a.protected, b.protected);
        assert_eq!(a.report, b.report);
        a.report.validate().unwrap();
        for id in ["no_defense", "dmp"] {
            for m in ["a_train", "a_test"] {
                let v = a.report.get(id, m).unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
