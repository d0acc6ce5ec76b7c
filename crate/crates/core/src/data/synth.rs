use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

/// Parameters of the centroid-plus-bitflip generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Probability that each bit of a sample differs from its class
    /// centroid.
    pub cluster_noise: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_samples: 60_000,
            n_features: 600,
            n_classes: 100,
            cluster_noise: 0.40,
            seed: 7,
        }
    }
}

/// Purchase-style binary classification data: one random binary centroid
/// per class, samples assigned to classes round-robin, each bit of the
/// centroid flipped independently with probability `cluster_noise`.
pub fn synth_purchase(p: &SynthParams) -> Result<Dataset> {
    if p.n_classes == 0 || p.n_features == 0 {
        return Err(Error::invalid("n_classes and n_features must be positive"));
    }
    if p.n_classes > p.n_samples {
        return Err(Error::invalid(format!(
            "n_classes ({}) exceeds n_samples ({})",
            p.n_classes, p.n_samples
        )));
    }
    if !(0.0..0.5).contains(&p.cluster_noise) {
        return Err(Error::invalid(format!(
            "cluster_noise must lie in [0, 0.5), got {}",
            p.cluster_noise
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let centroids = Array2::from_shape_simple_fn((p.n_classes, p.n_features), || {
        if rng.random::<bool>() {
            1.0
        } else {
            0.0
        }
    });
    let labels: Vec<usize> = (0..p.n_samples).map(|i| i % p.n_classes).collect();
    let mut features = Array2::zeros((p.n_samples, p.n_features));
    for (mut row, &y) in features.rows_mut().into_iter().zip(&labels) {
        for (v, &c) in row.iter_mut().zip(centroids.row(y)) {
            let flip = p.cluster_noise > 0.0 && rng.random::<f64>() < p.cluster_noise;
            *v = if flip { 1.0 - c } else { c };
        }
    }
    let origin = (0..p.n_samples).collect();
    Ok(Dataset::new(features, labels, p.n_classes, FeatureKind::Binary)?.with_origin(origin))
}

/// Synthetic reference rows: rows of `d_tr` drawn with replacement, each
/// bit flipped independently with `flip_probability`.
pub fn perturb_synth_ref(d_tr: &Dataset, flip_probability: f64, n_out: usize, seed: u64) -> Result<FeatureMatrix> {
    if !(flip_probability > 0.0 && flip_probability < 0.5) {
        return Err(Error::invalid(format!(
            "flip_probability must lie in (0, 0.5), got {flip_probability}"
        )));
    }
    if d_tr.kind() != FeatureKind::Binary {
        return Err(Error::invalid("bit-flip perturbation needs binary features"));
    }
    if d_tr.is_empty() && n_out > 0 {
        return Err(Error::invalid("cannot sample from an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n_out, d_tr.n_features()));
    for mut row in out.rows_mut() {
        let src = rng.random_range(0..d_tr.len());
        for (v, &b) in row.iter_mut().zip(d_tr.row(src)) {
            *v = if rng.random::<f64>() < flip_probability { 1.0 - b } else { b };
        }
    }
    FeatureMatrix::new(out, FeatureKind::Binary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> SynthParams {
        SynthParams {
            n_samples: 203,
            n_features: 40,
            n_classes: 10,
            cluster_noise: noise,
            seed: 3,
        }
    }

    #[test]
    fn noiseless_samples_equal_their_centroid() {
        let d = synth_purchase(&small(0.0)).unwrap();
        // The first sample of each class is its centroid; nearest centroid
        // classification is then perfect.
        let centroids: Vec<&[f64]> = (0..10).map(|c| d.row(c)).collect();
        let mut correct = 0;
        for i in 0..d.len() {
            let dist = |c: &[f64]| c.iter().zip(d.row(i)).filter(|(a, b)| a != b).count();
            let best = (0..10).min_by_key(|&c| dist(centroids[c])).unwrap();
            correct += usize::from(best == d.labels()[i]);
        }
        assert_eq!(correct, d.len());
    }

    #[test]
    fn single_class_has_all_zero_labels() {
        let d = synth_purchase(&SynthParams { n_classes: 1, ..small(0.2) }).unwrap();
        assert!(d.labels().iter().all(|&y| y == 0));
    }

    #[test]
    fn classes_are_balanced_and_binary() {
        let d = synth_purchase(&small(0.3)).unwrap();
        let mut counts = [0usize; 10];
        d.labels().iter().for_each(|&y| counts[y] += 1);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert!(d.features().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn generator_is_seeded() {
        assert_eq!(synth_purchase(&small(0.2)).unwrap(), synth_purchase(&small(0.2)).unwrap());
        let other = SynthParams { seed: 4, ..small(0.2) };
        assert_ne!(synth_purchase(&small(0.2)).unwrap(), synth_purchase(&other).unwrap());
    }

    #[test]
    fn rejects_unlearnable_noise_and_too_many_classes() {
        assert!(matches!(synth_purchase(&small(0.5)), Err(Error::InvalidInput(_))));
        let p = SynthParams { n_samples: 5, ..small(0.1) };
        assert!(matches!(synth_purchase(&p), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn perturbation_flips_at_the_requested_rate() {
        let d = synth_purchase(&SynthParams {
            n_samples: 50,
            n_features: 600,
            n_classes: 5,
            cluster_noise: 0.1,
            seed: 1,
        })
        .unwrap();
        let out = perturb_synth_ref(&d, 0.01, 2000, 9).unwrap();
        // Mean Hamming distance to the nearest training row estimates the
        // flip count, which is Binomial(600, 0.01) with mean 6.
        let mut total = 0usize;
        for i in 0..out.len() {
            let best = (0..d.len())
                .map(|j| out.row(i).iter().zip(d.row(j)).filter(|(a, b)| a != b).count())
                .min()
                .unwrap();
            total += best;
        }
        let mean = total as f64 / out.len() as f64;
        assert!((mean - 6.0).abs() < 0.3, "mean flips {mean}");
    }

    #[test]
    fn perturbation_edge_cases() {
        let d = synth_purchase(&small(0.1)).unwrap();
        assert_eq!(perturb_synth_ref(&d, 0.1, 0, 1).unwrap().len(), 0);
        assert!(perturb_synth_ref(&d, 0.0, 5, 1).is_err());
        assert!(perturb_synth_ref(&d, 0.5, 5, 1).is_err());
    }
}
