//! Single-layer GRU cell with hand-derived backpropagation.
//!
//! Update rule:
//! ```text
//! z  = sigmoid(Wz x + Uz h + bz)
//! r  = sigmoid(Wr x + Ur h + br)
//! hc = tanh(Wh x + Uh (r .* h) + bh)
//! h' = (1 - z) .* h + z .* hc
//! ```
//! The forward step caches every intermediate needed by the backward pass;
//! analytic gradients are checked against central finite differences in the
//! acceptance suite.

use rand_chacha::ChaCha8Rng;

use super::{axpy, matvec, matvec_t_accum, outer_accum, ParamSet, Shape, TensorId};
use crate::error::{Error, Result};
use crate::nnet::ops::sigmoid;

/// Tensor handles for one GRU cell inside a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct GruCell {
    pub wz: TensorId,
    pub wr: TensorId,
    pub wh: TensorId,
    pub uz: TensorId,
    pub ur: TensorId,
    pub uh: TensorId,
    pub bz: TensorId,
    pub br: TensorId,
    pub bh: TensorId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Cached activations of one forward step.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    /// `r .* h_prev`, the gated recurrent input of the candidate.
    pub rh: Vec<f64>,
    pub hc: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruCell {
    /// Declare the nine tensors of one cell, named `<prefix>.wz` etc.
    /// Input-to-hidden and hidden-to-hidden weights are uniformly
    /// initialized, gate biases start at zero.
    pub fn declare(
        params: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let m = |p: &mut ParamSet, n: &str, rng: &mut ChaCha8Rng| {
            p.add_matrix(&format!("{prefix}.{n}"), hidden_dim, input_dim, rng)
        };
        let u = |p: &mut ParamSet, n: &str, rng: &mut ChaCha8Rng| {
            p.add_matrix(&format!("{prefix}.{n}"), hidden_dim, hidden_dim, rng)
        };
        let wz = m(params, "wz", rng);
        let wr = m(params, "wr", rng);
        let wh = m(params, "wh", rng);
        let uz = u(params, "uz", rng);
        let ur = u(params, "ur", rng);
        let uh = u(params, "uh", rng);
        let bz = params.add_zero_vector(&format!("{prefix}.bz"), hidden_dim);
        let br = params.add_zero_vector(&format!("{prefix}.br"), hidden_dim);
        let bh = params.add_zero_vector(&format!("{prefix}.bh"), hidden_dim);
        GruCell {
            wz,
            wr,
            wh,
            uz,
            ur,
            uh,
            bz,
            br,
            bh,
            input_dim,
            hidden_dim,
        }
    }

    /// One forward step; returns the full activation cache.
    pub fn step(&self, params: &ParamSet, x: &[f64], h_prev: &[f64]) -> Result<GruStep> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "gru input has length {}, cell expects {}",
                x.len(),
                self.input_dim
            )));
        }
        if h_prev.len() != self.hidden_dim {
            return Err(Error::Shape(format!(
                "gru hidden state has length {}, cell expects {}",
                h_prev.len(),
                self.hidden_dim
            )));
        }
        let h = self.hidden_dim;
        let e = self.input_dim;

        let mut pre_z = params.values(self.bz).to_vec();
        let mut pre_r = params.values(self.br).to_vec();
        gate_preact(params, self.wz, self.uz, x, h_prev, e, h, &mut pre_z);
        gate_preact(params, self.wr, self.ur, x, h_prev, e, h, &mut pre_r);
        let z: Vec<f64> = pre_z.iter().map(|&v| sigmoid(v)).collect();
        let r: Vec<f64> = pre_r.iter().map(|&v| sigmoid(v)).collect();

        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut pre_h = params.values(self.bh).to_vec();
        gate_preact(params, self.wh, self.uh, x, &rh, e, h, &mut pre_h);
        let hc: Vec<f64> = pre_h.iter().map(|&v| v.tanh()).collect();

        let h_new: Vec<f64> = z
            .iter()
            .zip(&hc)
            .zip(h_prev)
            .map(|((zi, hci), hi)| (1.0 - zi) * hi + zi * hci)
            .collect();

        Ok(GruStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            rh,
            hc,
            h: h_new,
        })
    }

    /// Backward through one cached step. `dh` is dLoss/d(new hidden).
    /// Accumulates weight gradients into `params` and returns
    /// `(dLoss/dx, dLoss/dh_prev)`.
    pub fn backprop(&self, params: &mut ParamSet, step: &GruStep, dh: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim;
        let ed = self.input_dim;
        debug_assert_eq!(dh.len(), hd);

        // h' = (1-z).*h + z.*hc
        let mut dz = vec![0.0; hd];
        let mut dhc = vec![0.0; hd];
        let mut dh_prev = vec![0.0; hd];
        for i in 0..hd {
            dz[i] = dh[i] * (step.hc[i] - step.h_prev[i]);
            dhc[i] = dh[i] * step.z[i];
            dh_prev[i] = dh[i] * (1.0 - step.z[i]);
        }

        // hc = tanh(pre_h)
        let da_h: Vec<f64> = dhc
            .iter()
            .zip(&step.hc)
            .map(|(d, hc)| d * (1.0 - hc * hc))
            .collect();

        // pre_h = Wh x + Uh rh + bh; rh = r .* h_prev
        let mut d_rh = vec![0.0; hd];
        matvec_t_accum(params.values(self.uh), hd, hd, &da_h, &mut d_rh);
        let mut dr = vec![0.0; hd];
        for i in 0..hd {
            dr[i] = d_rh[i] * step.h_prev[i];
            dh_prev[i] += d_rh[i] * step.r[i];
        }

        // gate nonlinearities
        let da_z: Vec<f64> = dz
            .iter()
            .zip(&step.z)
            .map(|(d, z)| d * z * (1.0 - z))
            .collect();
        let da_r: Vec<f64> = dr
            .iter()
            .zip(&step.r)
            .map(|(d, r)| d * r * (1.0 - r))
            .collect();

        // input and recurrent contributions to dx / dh_prev (reads only)
        let mut dx = vec![0.0; ed];
        matvec_t_accum(params.values(self.wz), hd, ed, &da_z, &mut dx);
        matvec_t_accum(params.values(self.wr), hd, ed, &da_r, &mut dx);
        matvec_t_accum(params.values(self.wh), hd, ed, &da_h, &mut dx);
        matvec_t_accum(params.values(self.uz), hd, hd, &da_z, &mut dh_prev);
        matvec_t_accum(params.values(self.ur), hd, hd, &da_r, &mut dh_prev);

        // weight gradients
        outer_accum(params.grad_mut(self.wz), &da_z, &step.x);
        outer_accum(params.grad_mut(self.wr), &da_r, &step.x);
        outer_accum(params.grad_mut(self.wh), &da_h, &step.x);
        outer_accum(params.grad_mut(self.uz), &da_z, &step.h_prev);
        outer_accum(params.grad_mut(self.ur), &da_r, &step.h_prev);
        outer_accum(params.grad_mut(self.uh), &da_h, &step.rh);
        axpy(params.grad_mut(self.bz), 1.0, &da_z);
        axpy(params.grad_mut(self.br), 1.0, &da_r);
        axpy(params.grad_mut(self.bh), 1.0, &da_h);

        (dx, dh_prev)
    }
}

fn gate_preact(
    params: &ParamSet,
    w: TensorId,
    u: TensorId,
    x: &[f64],
    h: &[f64],
    input_dim: usize,
    hidden_dim: usize,
    out: &mut [f64],
) {
    debug_assert!(matches!(
        params.tensor(w).shape,
        Shape::Matrix { rows, cols } if rows == hidden_dim && cols == input_dim
    ));
    let mut tmp = vec![0.0; hidden_dim];
    matvec(params.values(w), hidden_dim, input_dim, x, &mut tmp);
    for (o, v) in out.iter_mut().zip(&tmp) {
        *o += v;
    }
    matvec(params.values(u), hidden_dim, hidden_dim, h, &mut tmp);
    for (o, v) in out.iter_mut().zip(&tmp) {
        *o += v;
    }
}
