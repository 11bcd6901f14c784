//! Central finite-difference gradient estimation, used to validate the
//! hand-written backward passes.

use super::ParamSet;
use crate::error::Result;

/// Guard added to the relative-error denominator so near-zero gradient
/// pairs do not blow the ratio up on rounding noise.
pub const FD_REL_GUARD: f64 = 1e-4;

/// Numerically estimate dLoss/dtheta for every parameter via central
/// differences with the given `eps`. The loss closure must be a pure
/// function of the parameter values. Parameters are restored to their
/// exact original bit patterns before returning.
///
/// Returns one gradient vector per tensor, in declaration order.
pub fn finite_diff_grad<F>(
    params: &mut ParamSet,
    eps: f64,
    mut loss: F,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let n_tensors = params.len();
    let mut grads = Vec::with_capacity(n_tensors);
    for tensor_idx in 0..n_tensors {
        let n = params.iter().nth(tensor_idx).expect("index in range").values.len();
        let mut g = vec![0.0; n];
        for i in 0..n {
            let original = {
                let t = params.iter_mut().nth(tensor_idx).expect("index in range");
                let original = t.values[i];
                t.values[i] = original + eps;
                original
            };
            let up = loss(params)?;
            params.iter_mut().nth(tensor_idx).expect("index in range").values[i] =
                original - eps;
            let down = loss(params)?;
            params.iter_mut().nth(tensor_idx).expect("index in range").values[i] = original;
            g[i] = (up - down) / (2.0 * eps);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Worst-case relative error between analytic and numeric gradients:
/// `|a - n| / max(|a|, |n|, FD_REL_GUARD)`, maximized over entries.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(FD_REL_GUARD))
        .fold(0.0, f64::max)
}
