//! Stateless numeric operations shared by both models.

use crate::error::{Error, Result};

/// Probabilities are floored at this value before taking logs, so a
/// degenerate zero-probability step contributes a large finite loss
/// instead of infinity.
pub const LOG_FLOOR: f64 = 1e-12;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax. Errors on non-finite input.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Shape("softmax of empty vector".into()));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {bad}")));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Total negative log-likelihood of `targets` under per-step probability
/// vectors, with the [`LOG_FLOOR`] applied before each log.
pub fn sequence_nll(step_probs: &[Vec<f64>], targets: &[u32]) -> Result<f64> {
    if step_probs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "sequence_nll: {} probability vectors vs {} targets",
            step_probs.len(),
            targets.len()
        )));
    }
    let mut loss = 0.0;
    for (probs, &t) in step_probs.iter().zip(targets) {
        let t = t as usize;
        if t >= probs.len() {
            return Err(Error::Shape(format!(
                "sequence_nll: target id {t} out of range for {} classes",
                probs.len()
            )));
        }
        loss -= probs[t].max(LOG_FLOOR).ln();
    }
    Ok(loss)
}

/// Binary cross-entropy from the raw logit, in the numerically stable
/// softplus form `max(s,0) - s*y + ln(1 + exp(-|s|))`. Its exact
/// derivative in `s` is `sigmoid(s) - y`, which keeps the analytic
/// gradient consistent with finite differences on this expression.
pub fn bce_loss(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// Inverse-CDF draw from a probability vector given a uniform `u` in [0,1).
pub fn sampled_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetric_pair() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form_quarters() {
        // softmax([ln 1, ln 3]) = [1/4, 3/4]
        let p = softmax(&[1.0f64.ln(), 3.0f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(&[0.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn nll_uniform_closed_form() {
        // uniform over V=4, 3 targets -> 3 ln 4
        let probs = vec![vec![0.25; 4]; 3];
        let loss = sequence_nll(&probs, &[0, 1, 2]).unwrap();
        assert!((loss - 3.0 * 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_perfect_prediction_is_zero() {
        let probs = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let loss = sequence_nll(&probs, &[1, 0]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn nll_floors_zero_probability() {
        let probs = vec![vec![1.0, 0.0]];
        let loss = sequence_nll(&probs, &[1]).unwrap();
        // -ln(1e-12) = 27.63...
        assert!((loss - (-LOG_FLOOR.ln())).abs() < 1e-9);
        assert!(loss > 27.0 && loss < 28.0);
    }

    #[test]
    fn nll_length_mismatch_errors() {
        let probs = vec![vec![0.5, 0.5]];
        assert!(matches!(
            sequence_nll(&probs, &[0, 1]),
            Err(crate::error::Error::Shape(_))
        ));
    }

    #[test]
    fn bce_matches_naive_form() {
        for &(s, y) in &[(0.7, 1.0), (-2.3, 0.0), (4.0, 0.0), (-1.0, 1.0)] {
            let p = sigmoid(s);
            let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((bce_loss(s, y) - naive).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in proptest::collection::vec(-1e3..1e3f64, 1..40)) {
            let p = softmax(&v).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_entries_positive_at_moderate_scale(
            v in proptest::collection::vec(-40.0..40.0f64, 1..40),
        ) {
            let p = softmax(&v).unwrap();
            prop_assert!(p.iter().all(|&x| x > 0.0));
        }

        #[test]
        fn softmax_shift_invariant(
            v in proptest::collection::vec(-1e3..1e3f64, 1..40),
            c in -1e3..1e3f64,
        ) {
            let a = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn nll_never_negative(
            raw in proptest::collection::vec(
                proptest::collection::vec(1e-6..1.0f64, 5),
                1..10,
            ),
            targets in proptest::collection::vec(0u32..5, 10),
        ) {
            let probs: Vec<Vec<f64>> = raw
                .iter()
                .map(|row| {
                    let s: f64 = row.iter().sum();
                    row.iter().map(|v| v / s).collect()
                })
                .collect();
            let targets = &targets[..probs.len()];
            let loss = sequence_nll(&probs, targets).unwrap();
            prop_assert!(loss >= 0.0);
            // zero iff every target carries probability 1
            let perfect = probs
                .iter()
                .zip(targets)
                .all(|(p, &t)| p[t as usize] == 1.0);
            prop_assert_eq!(loss == 0.0, perfect);
        }
    }

    #[test]
    fn sampled_index_covers_support() {
        let probs = [0.25, 0.5, 0.25];
        assert_eq!(sampled_index(&probs, 0.0), 0);
        assert_eq!(sampled_index(&probs, 0.3), 1);
        assert_eq!(sampled_index(&probs, 0.9), 2);
        assert_eq!(sampled_index(&probs, 0.999_999_999), 2);
    }
}
