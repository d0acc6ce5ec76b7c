//! Softmax, losses and entropy on probability vectors.
//!
//! Every logarithm of a probability goes through [`PROB_FLOOR`] so confident
//! teachers never produce infinite losses.

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[inline]
pub(crate) fn ln_floor(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Temperature-scaled softmax, `softmax(logits / temperature)`.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::invalid("softmax: logits must be finite"));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, temperature, &mut out);
    Ok(out)
}

pub(crate) fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// Unchecked softmax into a preallocated slice (max-subtracted).
pub(crate) fn softmax_into(logits: &[f64], temperature: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = ((z - max) / temperature).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Shannon entropy in nats, `-sum p ln p` (with the probability floor).
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * ln_floor(p))
        .sum()
}

/// Cross-entropy against a (possibly smoothed) one-hot label, minus a
/// confidence penalty on the prediction entropy.
///
/// The smoothed target is `(1 - s) * onehot(label) + s / c`.
pub fn cross_entropy(
    probs: &[f64],
    label: usize,
    label_smoothing: f64,
    confidence_penalty: f64,
) -> Result<f64> {
    let c = probs.len();
    if label >= c {
        return Err(Error::invalid(format!(
            "label {label} out of range for {c} classes"
        )));
    }
    if !(0.0..1.0).contains(&label_smoothing) {
        return Err(Error::invalid("label_smoothing must lie in [0, 1)"));
    }
    Ok(cross_entropy_unchecked(
        probs,
        label,
        label_smoothing,
        confidence_penalty,
    ))
}

pub(crate) fn cross_entropy_unchecked(
    probs: &[f64],
    label: usize,
    label_smoothing: f64,
    confidence_penalty: f64,
) -> f64 {
    let c = probs.len() as f64;
    let off = label_smoothing / c;
    let mut loss = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        let q = if i == label { 1.0 - label_smoothing + off } else { off };
        if q != 0.0 {
            loss -= q * ln_floor(p);
        }
    }
    if confidence_penalty != 0.0 {
        loss -= confidence_penalty * entropy(probs);
    }
    loss
}

/// `KL(target || student) = sum_i t_i ln(t_i / p_i)`, with `0 ln 0 = 0`.
pub fn kl_loss(target: &[f64], student_probs: &[f64]) -> Result<f64> {
    if target.len() != student_probs.len() {
        return Err(Error::invalid(format!(
            "kl_loss: target has {} entries, student has {}",
            target.len(),
            student_probs.len()
        )));
    }
    Ok(kl_unchecked(target, student_probs))
}

pub(crate) fn kl_unchecked(target: &[f64], student_probs: &[f64]) -> f64 {
    target
        .iter()
        .zip(student_probs)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &p)| t * (ln_floor(t) - ln_floor(p)))
        .sum()
}

/// Index of the largest entry; the first one wins on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetric_logits_are_uniform() {
        let p = softmax_t(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_high_temperature_is_uniform() {
        let p = softmax_t(&[10.0, 0.0], 1e6).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-5 && (p[1] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn softmax_temperature_rescales_logits() {
        let a = softmax_t(&[2.0, 0.0], 2.0).unwrap();
        let b = softmax_t(&[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-15);
        assert_abs_diff_eq!(a[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], 1.0 / (e + 1.0), epsilon = 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(matches!(softmax_t(&[1.0], 0.0), Err(Error::InvalidInput(_))));
        assert!(matches!(softmax_t(&[1.0], -2.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax_t(&[1e300, 0.0, -1e300], 1.0).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_of_one_hot_is_zero() {
        let l = cross_entropy(&[0.0, 1.0, 0.0], 1, 0.0, 0.0).unwrap();
        assert!(l.abs() <= 1e-11);
    }

    #[test]
    fn cross_entropy_of_uniform_is_ln_c() {
        let p = vec![0.25; 4];
        assert_abs_diff_eq!(cross_entropy(&p, 2, 0.0, 0.0).unwrap(), 4f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn cross_entropy_with_smoothing_matches_direct_formula() {
        // q = (0.9, 0.1) for label 0 with smoothing 0.2 over 2 classes.
        let direct = -(0.9 * 0.5f64.ln() + 0.1 * 0.5f64.ln());
        let l = cross_entropy(&[0.5, 0.5], 0, 0.2, 0.0).unwrap();
        assert_abs_diff_eq!(l, direct, epsilon = 1e-15);

        let probs: [f64; 3] = [0.7, 0.2, 0.1];
        let q = [0.1 / 3.0, 0.9 + 0.1 / 3.0, 0.1 / 3.0];
        let h = -(0.7f64 * 0.7f64.ln() + 0.2 * 0.2f64.ln() + 0.1 * 0.1f64.ln());
        let direct: f64 = -q.iter().zip(&probs).map(|(q, p)| q * p.ln()).sum::<f64>() - 0.5 * h;
        let l = cross_entropy(&probs, 1, 0.1, 0.5).unwrap();
        assert_abs_diff_eq!(l, direct, epsilon = 1e-14);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        assert!(matches!(
            cross_entropy(&[0.5, 0.5], 2, 0.0, 0.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn kl_identity_and_closed_form() {
        let p = [0.2, 0.3, 0.5];
        assert!(kl_loss(&p, &p).unwrap().abs() <= 1e-11);
        assert_abs_diff_eq!(kl_loss(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert!(matches!(kl_loss(&[1.0], &[0.5, 0.5]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn kl_matches_straight_line_summation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut draw = |n: usize| {
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let t = draw(100);
        let p = draw(100);
        let mut oracle = 0.0;
        for i in 0..100 {
            oracle += t[i] * (t[i] / p[i]).ln();
        }
        assert!((kl_loss(&t, &p).unwrap() - oracle).abs() < 1e-12);
    }

    fn logits() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-30.0f64..30.0, 2..20)
    }

    fn distribution() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 2..20).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_keeps_argmax(z in logits(), t in 0.01f64..100.0) {
            let p = softmax_t(&z, t).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert_eq!(argmax(&p), argmax(&z));
        }

        #[test]
        fn kl_is_nonnegative(a in distribution(), b in distribution()) {
            let n = a.len().min(b.len());
            let renorm = |v: &[f64]| {
                let s: f64 = v[..n].iter().sum();
                if s == 0.0 { vec![1.0 / n as f64; n] } else { v[..n].iter().map(|x| x / s).collect::<Vec<_>>() }
            };
            let (a, b) = (renorm(&a), renorm(&b));
            prop_assert!(kl_loss(&a, &b).unwrap() >= -1e-9);
            prop_assert!(kl_loss(&a, &a).unwrap() <= 1e-11);
        }

        #[test]
        fn entropy_is_bounded(p in distribution()) {
            let h = entropy(&p);
            prop_assert!(h >= -1e-12 && h <= (p.len() as f64).ln() + 1e-9);
        }
    }
}
