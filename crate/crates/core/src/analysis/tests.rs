use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stats::{median, pearson, ranks, spearman};
use super::*;
use crate::data::FeatureKind;
use crate::nncore::{architecture, write_model};

fn model_bytes(m: &Mlp) -> Vec<u8> {
    let mut buf = Vec::new();
    write_model(m, &mut buf).unwrap();
    buf
}

fn random_binary(n: usize, d: usize, c: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, d), |_| f64::from(u8::from(rng.random_bool(0.5))));
    let y = (0..n).map(|_| rng.random_range(0..c)).collect();
    Dataset::new(x, y, c, FeatureKind::Binary).unwrap()
}

fn full_batch(n: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: n,
        learning_rate: 0.01,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn correlation_examples() {
    let x = [1.0, 2.0, 4.0, 8.0, 3.0];
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    assert!(matches!(pearson(&x, &[1.0; 5]), Err(Error::UndefinedCorrelation(_))));
    assert!(matches!(pearson(&x[..2], &y[..2]), Err(Error::UndefinedCorrelation(_))));
    // Monotone but nonlinear.
    let cubes: Vec<f64> = x.iter().map(|v| v * v * v).collect();
    assert!((spearman(&x, &cubes).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    assert_eq!(median(&[]), None);
}

#[test]
fn correlation_report_on_a_scaled_trace() {
    let trace = RatioTrace {
        delta_kl: vec![0.2, 0.4, 1.0, 0.1],
        delta_ce: vec![0.1, 0.2, 0.5, 0.05],
        entropy: vec![0.5, 1.0, 2.0, 0.1],
        approx_influence: None,
    };
    let r = correlation_report(&trace).unwrap();
    assert!((r.pearson_dkl_dce - 1.0).abs() < 1e-12);
    assert!((r.spearman_entropy_dkl - 1.0).abs() < 1e-12);
    let short = RatioTrace {
        delta_kl: vec![0.1, 0.2],
        delta_ce: vec![0.1, 0.2],
        entropy: vec![0.1, 0.2],
        approx_influence: None,
    };
    assert!(matches!(correlation_report(&short), Err(Error::UndefinedCorrelation(_))));
}

fn random_pair(seed: u64) -> (NeighborPair, Mlp, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..8);
    let c = rng.random_range(2..6);
    let arch = architecture(d, &[rng.random_range(1..6)], c);
    let d_tr = random_binary(10, d, c, seed);
    let pair = NeighborPair {
        d_tr,
        removed_index: 0,
        full: Mlp::new(&arch, seed + 1).unwrap(),
        reduced: Mlp::new(&arch, seed + 2).unwrap(),
    };
    let protected = Mlp::new(&arch, seed + 3).unwrap();
    let x_ref = random_binary(rng.random_range(1..30), d, c, seed + 4);
    (pair, protected, x_ref)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bound_dominates_the_signed_sum(seed in 0u64..10_000, t in 0.25f64..8.0) {
        let (pair, protected, x_ref) = random_pair(seed);
        let r = ratio_bound(&pair, &protected, &x_ref, t).unwrap();
        prop_assert!(r.bound >= r.signed_sum.abs());
        prop_assert!(r.trace.delta_kl.iter().chain(&r.trace.delta_ce).chain(&r.trace.entropy)
            .all(|v| v.is_finite() && *v >= 0.0));
        prop_assert_eq!(r.trace.len(), x_ref.len());
    }

    #[test]
    fn doubling_the_temperature_halves_the_bound(seed in 0u64..10_000, t in 0.25f64..8.0) {
        let (pair, protected, x_ref) = random_pair(seed);
        let r = ratio_bound(&pair, &protected, &x_ref, t).unwrap();
        let h = r.rescaled(2.0 * t).unwrap();
        prop_assert_eq!(h.bound, r.bound / 2.0);
        prop_assert_eq!(h.signed_sum, r.signed_sum / 2.0);
    }
}

#[test]
fn identical_models_give_a_zero_bound() {
    let (mut pair, protected, x_ref) = random_pair(5);
    pair.reduced = pair.full.clone();
    let r = ratio_bound(&pair, &protected, &x_ref, 2.0).unwrap();
    assert_eq!(r.bound, 0.0);
    assert_eq!(r.signed_sum, 0.0);
    assert!(r.trace.delta_ce.iter().all(|&v| v == 0.0));
}

#[test]
fn ratio_bound_rejects_mismatched_models() {
    let (pair, _, x_ref) = random_pair(6);
    let other = Mlp::new(&architecture(x_ref.n_features() + 1, &[3], 2), 0).unwrap();
    assert!(ratio_bound(&pair, &other, &x_ref, 1.0).is_err());
    assert!(ratio_bound(&pair, &pair.full, &x_ref, 0.0).is_err());
}

#[test]
fn oracle_is_deterministic_and_consistent() {
    let d_tr = random_binary(40, 12, 3, 1);
    let arch = architecture(12, &[8], 3);
    let recipe = full_batch(16, 20);
    let a = retrain_oracle(&arch, &d_tr, 7, &recipe).unwrap();
    let b = retrain_oracle(&arch, &d_tr, 7, &recipe).unwrap();
    assert_eq!(model_bytes(&a.reduced), model_bytes(&b.reduced));
    assert_ne!(model_bytes(&a.full), model_bytes(&a.reduced));
    let nothing_removed = oracle_run(&arch, &d_tr, &recipe, None).unwrap();
    assert_eq!(model_bytes(&nothing_removed), model_bytes(&a.full));
    assert!(retrain_oracle(&arch, &d_tr, 40, &recipe).is_err());
    assert!(retrain_oracle(&arch, &d_tr.head(1), 0, &recipe).is_err());
}

fn flip(row: &[f64], rng: &mut ChaCha8Rng, p: f64) -> Vec<f64> {
    row.iter().map(|&v| if rng.random_bool(p) { 1.0 - v } else { v }).collect()
}

fn clustered(counts: &[usize], d: usize, p: f64, seed: u64) -> (Dataset, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids: Vec<Vec<f64>> = counts
        .iter()
        .map(|_| (0..d).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect())
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            rows.extend(flip(&centroids[k], &mut rng, p));
            labels.push(k);
        }
    }
    let n = labels.len();
    let x = Array2::from_shape_vec((n, d), rows).unwrap();
    (Dataset::new(x, labels, counts.len(), FeatureKind::Binary).unwrap(), centroids)
}

#[test]
fn removing_a_duplicate_barely_moves_the_losses() {
    let (base, _) = clustered(&[10, 10, 10], 16, 0.1, 2);
    let mut idx: Vec<usize> = (0..30).collect();
    idx.push(0);
    let d_tr = base.subset(&idx);
    let arch = architecture(16, &[8], 3);
    let recipe = TrainConfig {
        learning_rate: 0.05,
        ..full_batch(31, 1000)
    };
    let pair = retrain_oracle(&arch, &d_tr, 30, &recipe).unwrap();
    // Every training row, including the one whose copy was removed.
    let r = ratio_bound(&pair, &pair.full, &base, 1.0).unwrap();
    let worst = r.trace.delta_ce.iter().copied().fold(0.0, f64::max);
    assert!(worst <= 1e-3, "max delta CE {worst}");
}

#[test]
fn removing_the_only_member_of_a_class_hits_its_centroid_hardest() {
    let (d, c) = (24, 3);
    let (d_tr, centroids) = clustered(&[15, 15, 1], d, 0.1, 4);
    let x_ref = Dataset::new(
        Array2::from_shape_vec((c, d), centroids.concat()).unwrap(),
        (0..c).collect(),
        c,
        FeatureKind::Binary,
    )
    .unwrap();
    let arch = architecture(d, &[8], c);
    let pair = retrain_oracle(&arch, &d_tr, 30, &full_batch(31, 300)).unwrap();
    let r = ratio_bound(&pair, &pair.full, &x_ref, 1.0).unwrap();
    let dce = &r.trace.delta_ce;
    assert!(dce[2] > dce[0] && dce[2] > dce[1], "{dce:?}");
}

fn tiny_setup() -> (Mlp, Dataset) {
    let (d_tr, _) = clustered(&[20, 20, 20], 10, 0.3, 9);
    let arch = architecture(10, &[], 3);
    let recipe = TrainConfig {
        weight_decay: 1e-3,
        ..full_batch(60, 400)
    };
    let model = crate::dmp::train_unprotected(&arch, &d_tr, &recipe, None).unwrap().model;
    (model, d_tr)
}

#[test]
fn hessian_is_symmetric() {
    let (model, d_tr) = tiny_setup();
    let h = mean_loss_hessian(&model, &d_tr, HESSIAN_STEP).unwrap();
    let asym = h.iter().zip(h.t().iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(asym <= 1e-6, "max asymmetry {asym}");
    assert_eq!(h.nrows(), model.n_params());
}

#[test]
fn influence_examples() {
    let (model, d_tr) = tiny_setup();
    let z = (d_tr.row(0), d_tr.labels()[0]);
    let solver = InfluenceSolver::new(&model, &d_tr, 1e-3).unwrap();

    // A prediction saturated on its label has no gradient.
    let arch = model.layer_specs();
    let mut sharp = Mlp::zeros(&arch).unwrap();
    let last = sharp.n_layers() - 1;
    sharp.layers_mut()[last].bias.assign(&Array1::from(vec![60.0, 0.0, 0.0]));
    let zero_grad = influence_approx(&sharp, &d_tr, z, (d_tr.row(1), 0), 1e-3).unwrap();
    assert!(zero_grad < 1e-12, "{zero_grad}");

    // Convex case: a quadratic form with an SPD matrix.
    let linear = Mlp::new(&architecture(10, &[], 2), 1).unwrap();
    let two = random_binary(30, 10, 2, 10);
    let zz = (two.row(0), two.labels()[0]);
    assert!(influence_approx(&linear, &two, zz, zz, 1e-3).unwrap() > 0.0);

    assert!(solver.influence(z, z).unwrap() > 0.0);
    assert!(InfluenceSolver::new(&model, &d_tr, 0.0).is_err());
}

#[test]
fn influence_rejects_large_models() {
    let big = Mlp::new(&architecture(100, &[50], 2), 0).unwrap();
    let d_tr = random_binary(4, 100, 2, 0);
    let err = InfluenceSolver::new(&big, &d_tr, 1e-3).err().unwrap();
    assert!(matches!(err, Error::InvalidInput(ref m) if m.contains("smaller model")), "{err}");
}

#[test]
fn non_spd_hessian_reports_the_minimum_eigenvalue() {
    // A random untrained ReLU net on a tiny set is far from a minimum.
    let d_tr = random_binary(6, 6, 3, 12);
    let mut found = false;
    for seed in 0..20 {
        let model = Mlp::new(&architecture(6, &[5], 3), seed).unwrap();
        if let Err(Error::Numerical(m)) = InfluenceSolver::new(&model, &d_tr, 1e-6) {
            assert!(m.contains("minimum eigenvalue"), "{m}");
            found = true;
            break;
        }
    }
    assert!(found, "no indefinite Hessian among the random models");
}

#[test]
fn histogram_of_identical_sets_is_identical() {
    let v = [0.1, 0.5, 0.5, 2.0, 3.0];
    let h = Histogram::build(&v, &v, HIST_BINS).unwrap();
    assert_eq!(h.bins.len(), HIST_BINS);
    assert!(h.bins.iter().all(|b| b.member_frac == b.nonmember_frac));
    let total: f64 = h.bins.iter().map(|b| b.member_frac).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(h.bins[0].left, 0.1);
    assert_eq!(h.bins[HIST_BINS - 1].right, 3.0);
    assert!(h.to_csv().starts_with("bin_left,bin_right,member_frac,nonmember_frac\n"));
    let flat = Histogram::build(&[1.0], &[1.0], 4).unwrap();
    assert_eq!(flat.bins.iter().map(|b| b.member_frac).sum::<f64>(), 1.0);
    assert!(Histogram::build(&[], &[1.0], 4).is_err());
}

#[test]
fn per_class_gaps_average_to_the_global_gap() {
    // Balanced classes on both sides.
    let mk = |seed| {
        let base = random_binary(40, 12, 4, seed);
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        Dataset::new(base.features().clone(), labels, 4, FeatureKind::Binary).unwrap()
    };
    let members = mk(20);
    let nonmembers = mk(21);
    let model = crate::dmp::train_unprotected(&architecture(12, &[16], 4), &members, &full_batch(40, 200), None)
        .unwrap()
        .model;
    let r = distribution_report(&model, &members, &nonmembers).unwrap();
    let mean = r.per_class_egen.iter().map(|e| e.unwrap()).sum::<f64>() / 4.0;
    assert!((mean - r.e_gen).abs() < 1e-9);
    let cdf = r.egen_cdf();
    assert_eq!(cdf.last().unwrap().1, 1.0);
    assert!(cdf.windows(2).all(|w| w[0].0 <= w[1].0));
    assert!(r.member_median_norm < r.nonmember_median_norm);
    let same = distribution_report(&model, &members, &members).unwrap();
    assert_eq!(same.grad_norms.bins.iter().map(|b| b.member_frac).collect::<Vec<_>>(),
        same.grad_norms.bins.iter().map(|b| b.nonmember_frac).collect::<Vec<_>>());
    assert!(distribution_report(&model, &members, &members.head(0)).is_err());
}
