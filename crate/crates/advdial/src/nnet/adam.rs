//! Adam optimizer over a [`ParamSet`].

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamHyperparams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyperparams {
    fn default() -> Self {
        AdamHyperparams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyperparams {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyperparams {
            lr,
            ..Default::default()
        }
    }
}

/// First/second moment estimates, one pair of buffers per tensor,
/// aligned with the owning [`ParamSet`]'s declaration order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            m: params.iter().map(|t| vec![0.0; t.values.len()]).collect(),
            v: params.iter().map(|t| vec![0.0; t.values.len()]).collect(),
            t: 0,
        }
    }

    /// Steps completed so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one bias-corrected Adam update from the gradients currently
    /// accumulated in `params`, then zero those gradients.
    ///
    /// Fails with a numeric error (naming the offending tensor) if any
    /// gradient entry is non-finite; parameters are left untouched in
    /// that case.
    pub fn update(&mut self, params: &mut ParamSet, hp: &AdamHyperparams) -> Result<()> {
        for tensor in params.iter() {
            if let Some(bad) = tensor.grad.iter().find(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {bad} in tensor {}",
                    tensor.name
                )));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let corr1 = 1.0 - hp.beta1.powi(t);
        let corr2 = 1.0 - hp.beta2.powi(t);
        for (idx, tensor) in params.iter_mut().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..tensor.values.len() {
                let g = tensor.grad[i];
                m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
                v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                tensor.values[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
                tensor.grad[i] = 0.0;
            }
        }
        Ok(())
    }
}
