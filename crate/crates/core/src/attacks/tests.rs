use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{synth_purchase, FeatureKind, FeatureMatrix, SynthParams};
use crate::nncore::{architecture, grad_norms, Mlp, TrainConfig};

fn instances(rows: &[&[f64]], is_member: bool) -> Vec<AttackInstance> {
    rows.iter()
        .map(|r| AttackInstance {
            features: r.to_vec(),
            is_member,
        })
        .collect()
}

fn constant_half_model(dim: usize) -> AttackModel {
    let net = Mlp::zeros(&architecture(dim, &[], 2)).unwrap();
    AttackModel {
        rule: AttackRule::Mlp {
            net,
            standardizer: Standardizer {
                mean: vec![0.0; dim],
                scale: vec![1.0; dim],
            },
        },
        feature_kind: AttackKind::NshBlackbox,
    }
}

#[test]
fn constant_classifier_gain_and_accuracy() {
    let m = instances(&[&[1.0, 2.0], &[0.0, 3.0]], true);
    let n = instances(&[&[5.0, 2.0], &[1.0, 1.0]], false);
    let h = constant_half_model(2);
    let g = attack_gain(&h, &m, &n).unwrap();
    assert!((g - 2.0 * 0.5f64.ln()).abs() < 1e-15);
    assert!((g + 1.3863).abs() < 1e-4);
    let ms = AttackSet::new(AttackKind::NshBlackbox, 2, m).unwrap();
    let ns = AttackSet::new(AttackKind::NshBlackbox, 2, n).unwrap();
    assert_eq!(evaluate_attack(&h, &ms, &ns).unwrap().accuracy, 0.5);
}

#[test]
fn perfect_threshold_gain_is_at_the_optimum() {
    let h = AttackModel::threshold(0.5, AttackKind::Loss).unwrap();
    let m = instances(&[&[0.0], &[0.1]], true);
    let n = instances(&[&[1.0], &[2.0]], false);
    let g = attack_gain(&h, &m, &n).unwrap();
    assert!(g >= 2.0 * (1.0 - 1e-12f64).ln() - 1e-15);
    assert!(g <= 0.0);
    assert!(AttackModel::threshold(0.5, AttackKind::SortedProbs).is_err());
}

#[test]
fn gain_rejects_empty_sets() {
    let h = AttackModel::threshold(0.5, AttackKind::Loss).unwrap();
    let m = instances(&[&[0.0]], true);
    assert!(matches!(attack_gain(&h, &m, &[]), Err(Error::InvalidInput(_))));
    assert!(matches!(attack_gain(&h, &[], &m), Err(Error::InvalidInput(_))));
}

proptest! {
    #[test]
    fn gain_matches_direct_summation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.random_range(1..6);
        let net = Mlp::new(&architecture(dim, &[4], 2), rng.random()).unwrap();
        let h = AttackModel {
            rule: AttackRule::Mlp {
                net: net.clone(),
                standardizer: Standardizer { mean: vec![0.0; dim], scale: vec![1.0; dim] },
            },
            feature_kind: AttackKind::SortedProbs,
        };
        let mut draw = |k: usize, member: bool| -> Vec<AttackInstance> {
            (0..k)
                .map(|_| AttackInstance {
                    features: (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect(),
                    is_member: member,
                })
                .collect()
        };
        let m = draw(7, true);
        let n = draw(5, false);
        // Straight-line oracle: logits through an explicit two-way softmax.
        let p = |x: &[f64]| {
            let z = net.forward(x).unwrap();
            1.0 / (1.0 + (z[0] - z[1]).exp())
        };
        let mut a = 0.0;
        for i in &m {
            a += p(&i.features).clamp(1e-12, 1.0 - 1e-12).ln();
        }
        let mut b = 0.0;
        for i in &n {
            b += (1.0 - p(&i.features).clamp(1e-12, 1.0 - 1e-12)).ln();
        }
        let oracle = a / 7.0 + b / 5.0;
        let g = attack_gain(&h, &m, &n).unwrap();
        prop_assert!((g - oracle).abs() < 1e-12, "{g} vs {oracle}");
        prop_assert!(g <= 0.0);
    }

    #[test]
    fn tuned_threshold_never_loses_to_any_candidate(
        m in proptest::collection::vec(0.0f64..5.0, 1..30),
        n in proptest::collection::vec(0.0f64..5.0, 1..30),
        probe in 0.0f64..5.0,
    ) {
        let (t, acc) = tune_threshold(&m, &n).unwrap();
        let score = |t: f64| {
            let hm = m.iter().filter(|&&s| s < t).count();
            let hn = n.iter().filter(|&&s| s >= t).count();
            balanced_accuracy(hm, m.len(), hn, n.len())
        };
        prop_assert!((score(t) - acc).abs() < 1e-15);
        prop_assert!(acc >= score(probe) - 1e-15);
        prop_assert!(acc >= 0.5);
    }
}

#[test]
fn threshold_ties_go_low() {
    // Thresholds 1.5 and 3.5 both reach 0.75 balanced accuracy.
    let (t, acc) = tune_threshold(&[1.0, 3.0], &[2.0, 4.0]).unwrap();
    assert_eq!((t, acc), (1.5, 0.75));
    let (t, acc) = tune_threshold(&[0.0, 0.1], &[1.0, 2.0]).unwrap();
    assert_eq!((t, acc), (0.55, 1.0));
}

/// Bias-only two-class model that always predicts class 0 with high
/// confidence.
fn biased(d: usize) -> Mlp {
    Mlp::from_parts(
        &architecture(d, &[], 2),
        vec![Array2::zeros((2, d))],
        vec![Array1::from(vec![3.0, 0.0])],
    )
    .unwrap()
}

fn labeled(rows: usize, d: usize, label: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((rows, d), || f64::from(u8::from(rng.random::<bool>())));
    Dataset::new(x, vec![label; rows], 2, FeatureKind::Binary).unwrap()
}

#[test]
fn separable_losses_give_perfect_accuracy() {
    let m = labeled(10, 3, 0, 1);
    let n = labeled(10, 3, 1, 2);
    let r = bl_attack(&biased(3), &m, &n).unwrap();
    assert_eq!(r.tuned.accuracy, 1.0);
    assert_eq!(r.zero_one.accuracy, 1.0);
    assert!(r.tuned.gain <= 0.0);
}

#[test]
fn loss_attack_without_signal_is_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target = Mlp::new(&architecture(20, &[16], 5), 4).unwrap();
    let mut draw = |n: usize| {
        let x = Array2::from_shape_simple_fn((n, 20), || f64::from(u8::from(rng.random::<bool>())));
        let y = (0..n).map(|_| rng.random_range(0..5)).collect();
        Dataset::new(x, y, 5, FeatureKind::Binary).unwrap()
    };
    let (m, n) = (draw(4000), draw(4000));
    let r = bl_attack(&target, &m, &n).unwrap();
    assert!((r.tuned.accuracy - 0.5).abs() <= 0.02, "{}", r.tuned.accuracy);
    assert!((r.zero_one.accuracy - 0.5).abs() <= 0.02, "{}", r.zero_one.accuracy);
}

#[test]
fn loss_attack_preconditions() {
    let m = labeled(3, 3, 0, 1);
    let n = labeled(3, 3, 1, 2);
    assert!(matches!(bl_attack(&biased(3), &m, &n), Err(Error::InvalidInput(_))));
    let m = labeled(6, 3, 0, 1);
    let n = labeled(5, 3, 1, 2);
    assert!(matches!(bl_attack(&biased(3), &m, &n), Err(Error::InvalidInput(_))));
}

/// Hidden unit k fires only on training row k and votes for its label.
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
fn nsh_feature_layout() {
    let d = labeled(6, 5, 1, 9);
    let m = Mlp::new(&architecture(5, &[4, 3], 2), 1).unwrap();
    let bb = nsh_features(&m, d.row(0), 1, NshMode::Blackbox).unwrap();
    let wb = nsh_features(&m, d.row(0), 1, NshMode::Whitebox).unwrap();
    assert_eq!(bb.len(), 2 + 2);
    assert_eq!(wb.len(), bb.len() + m.n_layers() + 1);
    assert_eq!(&wb[..bb.len()], &bb[..]);
    let set = nsh_feature_set(&m, &d, NshMode::Whitebox, true).unwrap();
    assert_eq!(set.dim(), wb.len());
    assert_eq!(set.instances()[0].features, wb);
}

#[test]
fn memorized_member_has_tiny_loss_and_gradient() {
    let d = labeled(20, 30, 0, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y: Vec<usize> = (0..20).map(|_| rng.random_range(0..4)).collect();
    let d = Dataset::new(d.features().clone(), y, 4, FeatureKind::Binary).unwrap();
    let m = memorizer(&d, 40.0);
    let f = nsh_features(&m, d.row(3), d.labels()[3], NshMode::Whitebox).unwrap();
    let loss = f[4];
    let log_total = f[f.len() - 1];
    assert!(loss <= 1e-3, "{loss}");
    assert!(log_total <= 1e-2f64.ln(), "{log_total}");
    let norms = grad_norms(&m, d.row(3), d.labels()[3]).unwrap();
    assert!((log_total - norms.total.max(1e-12).ln()).abs() < 1e-12);
    assert_eq!(f[5], 1.0);
}

#[test]
fn blackbox_features_depend_only_on_probabilities() {
    let d = labeled(8, 5, 1, 2);
    let a = Mlp::new(&architecture(5, &[6], 3), 7).unwrap();
    let mut b = a.clone();
    // A common shift of every logit leaves the softmax unchanged.
    b.layers_mut()[1].bias += 2.5;
    let fa = nsh_feature_set(&a, &d, NshMode::Blackbox, true).unwrap();
    let fb = nsh_feature_set(&b, &d, NshMode::Blackbox, true).unwrap();
    for (x, y) in fa.instances().iter().zip(fb.instances()) {
        for (u, v) in x.features.iter().zip(&y.features) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn sorted_predictions_ignore_class_order() {
    let d = labeled(8, 5, 1, 2);
    let a = Mlp::new(&architecture(5, &[6], 4), 3).unwrap();
    let mut b = a.clone();
    let perm = [2, 0, 3, 1];
    let last = &a.layers()[1];
    let w = ndarray::stack(ndarray::Axis(0), &perm.map(|i| last.weights().row(i))).unwrap();
    let bias = Array1::from_iter(perm.iter().map(|&i| last.bias()[i]));
    b.layers_mut()[1].weights = w;
    b.layers_mut()[1].bias = bias;
    let sa = sorted_prediction_set(&a, &d, true).unwrap();
    let sb = sorted_prediction_set(&b, &d, true).unwrap();
    for (x, y) in sa.instances().iter().zip(sb.instances()) {
        for (u, v) in x.features.iter().zip(&y.features) {
            assert!((u - v).abs() < 1e-15);
        }
    }
}

struct Fixture {
    target: Mlp,
    known_m: Dataset,
    known_n: Dataset,
    eval_m: Dataset,
    eval_n: Dataset,
}

/// An overfit target on a small synthetic task.
fn fixture() -> Fixture {
    let corpus = synth_purchase(&SynthParams {
        n_samples: 4000,
        n_features: 100,
        n_classes: 10,
        cluster_noise: 0.42,
        seed: 8,
    })
    .unwrap();
    let (d_tr, rest) = corpus.split_at(2000);
    let cfg = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    let target = crate::dmp::train_unprotected(&architecture(100, &[64], 10), &d_tr, &cfg, None)
        .unwrap()
        .model;
    let (known_m, eval_m) = d_tr.split_at(1000);
    let (known_n, eval_n) = rest.split_at(1000);
    Fixture {
        target,
        known_m,
        known_n,
        eval_m,
        eval_n: eval_n.head(1000),
    }
}

#[test]
fn nsh_attack_finds_signal_and_loses_it_with_shuffled_labels() {
    let f = fixture();
    let cfg = AttackTrainConfig::default();
    let real = nsh_attack(&f.target, &f.known_m, &f.known_n, &f.eval_m, &f.eval_n, NshMode::Blackbox, &cfg).unwrap();
    assert!(real.accuracy > 0.55, "{}", real.accuracy);
    assert_eq!((real.n_members, real.n_nonmembers), (1000, 1000));

    let mut set = nsh_feature_set(&f.target, &f.known_m, NshMode::Blackbox, true)
        .unwrap()
        .concat(nsh_feature_set(&f.target, &f.known_n, NshMode::Blackbox, false).unwrap())
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut flags: Vec<bool> = set.instances().iter().map(|i| i.is_member).collect();
    use rand::seq::SliceRandom;
    flags.shuffle(&mut rng);
    for (inst, flag) in set.instances_mut().iter_mut().zip(flags) {
        inst.is_member = flag;
    }
    let model = train_attack_model(&set, &cfg).unwrap();
    let shuffled = evaluate_attack(
        &model,
        &nsh_feature_set(&f.target, &f.eval_m, NshMode::Blackbox, true).unwrap(),
        &nsh_feature_set(&f.target, &f.eval_n, NshMode::Blackbox, false).unwrap(),
    )
    .unwrap();
    assert!((shuffled.accuracy - 0.5).abs() <= 0.03, "{}", shuffled.accuracy);
    assert!(shuffled.gain < 2.0 * 0.5f64.ln() + 0.01);
}

#[test]
fn overlapping_attack_sets_are_rejected() {
    let f = fixture();
    let cfg = AttackTrainConfig::default();
    let leaked = f.eval_m.head(10);
    let err = nsh_attack(&f.target, &leaked, &f.known_n, &f.eval_m, &f.eval_n, NshMode::Blackbox, &cfg).unwrap_err();
    assert!(err.to_string().contains("overlap"), "{err}");
    // Content comparison when origins are missing.
    let bare = Dataset::new(leaked.features().clone(), leaked.labels().to_vec(), 10, FeatureKind::Binary).unwrap();
    assert!(datasets_overlap(&bare, &f.eval_m));
    assert!(!datasets_overlap(&f.known_m, &f.eval_m));
    let small_shadow = f.known_n.head(100);
    let err = nn_attack(&f.target, &TrainConfig::default(), &small_shadow, &f.eval_m, &f.eval_n, &cfg).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn ref_attack_needs_a_holdout() {
    let f = fixture();
    let empty = f.eval_n.head(0);
    let err = ref_data_mia(&f.target, &f.known_m, &empty, &AttackTrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn distance_attack_basics() {
    let refs = labeled(30, 70, 0, 1);
    let x_ref = refs.unlabeled();
    let members = refs.head(6);
    let nonmembers = labeled(6, 70, 0, 2);
    let model = Mlp::new(&architecture(70, &[], 2), 0).unwrap();
    let (report, trace) = adaptive_distance_attack(&model, &x_ref, &members, &nonmembers).unwrap();
    assert_eq!(trace.len(), 12);
    for (i, p) in trace[..6].iter().enumerate() {
        assert_eq!(p.min_distance, 0);
        assert_eq!(p.nearest_ref, i);
        assert!(p.is_member);
    }
    // Members sit on the reference rows, random rows do not.
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(hamming_distance(&[1.0, 0.0, 1.0], &[0.0, 0.0, 0.0]).unwrap(), 2);

    let cont = FeatureMatrix::new(Array2::from_elem((2, 70), 0.5), FeatureKind::Continuous).unwrap();
    assert!(matches!(
        adaptive_distance_attack(&model, &cont, &members, &nonmembers),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn attack_set_round_trip_and_errors() {
    let set = AttackSet::new(
        AttackKind::NshWhitebox,
        3,
        vec![
            AttackInstance {
                features: vec![0.1, 1.0 / 3.0, -2e-300],
                is_member: true,
            },
            AttackInstance {
                features: vec![5.0, 0.0, 1e300],
                is_member: false,
            },
        ],
    )
    .unwrap();
    let mut buf = Vec::new();
    write_attack_set(&set, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("dmp-attackset v1 kind=nsh_whitebox dim=3\n1,"));
    assert_eq!(read_attack_set(&buf[..]).unwrap(), set);

    let bad = "dmp-attackset v1 kind=loss dim=1\n1,0.5\n2,0.1\n";
    match read_attack_set(bad.as_bytes()).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 3),
        e => panic!("{e}"),
    }
    let short = "dmp-attackset v1 kind=sorted_probs dim=2\n1,0.5\n";
    assert!(matches!(read_attack_set(short.as_bytes()), Err(Error::Parse { line: 2, .. })));
    assert!(read_attack_set("dmp-attackset v1 kind=nope dim=1\n".as_bytes()).is_err());
    assert!(AttackSet::new(AttackKind::Loss, 2, vec![]).is_err());
}
