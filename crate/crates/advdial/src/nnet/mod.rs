//! Framework-free numeric core: parameter storage, GRU recurrence,
//! softmax/cross-entropy, Adam, and a finite-difference gradient oracle.
//!
//! Everything is 64-bit floats stored in flat `Vec<f64>` buffers. Gradients
//! live alongside their parameters and are zeroed by the optimizer step.

mod adam;
mod gradcheck;
mod gru;
mod ops;

pub use adam::{AdamHyperparams, AdamState};
pub use gradcheck::{finite_diff_grad, max_rel_error, FD_REL_GUARD};
pub use gru::{GruCell, GruStep};
pub use ops::{bce_loss, sampled_index, sequence_nll, sigmoid, softmax, LOG_FLOOR};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Weights are initialized uniformly in `[-INIT_RANGE, INIT_RANGE]`.
pub const INIT_RANGE: f64 = 0.08;

/// Model dimensions shared by the generator and discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl Dims {
    pub fn new(vocab: usize, embed: usize, hidden: usize) -> Result<Self> {
        if vocab == 0 || embed == 0 || hidden == 0 {
            return Err(Error::Config(format!(
                "model dims must all be >= 1, got vocab={vocab} embed={embed} hidden={hidden}"
            )));
        }
        Ok(Dims {
            vocab,
            embed,
            hidden,
        })
    }

    /// Validate an already-constructed value (fields are public).
    pub fn check(&self) -> Result<()> {
        Dims::new(self.vocab, self.embed, self.hidden).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Matrix { rows: usize, cols: usize },
    Vector { len: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Matrix { rows, cols } => rows * cols,
            Shape::Vector { len } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One named parameter tensor with its gradient slot.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Shape,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Index of a tensor within a [`ParamSet`]; stable for the life of the set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

/// Ordered, uniquely named collection of parameter tensors.
///
/// Iteration order is insertion order and is fixed: checkpoint
/// serialization writes tensors in exactly this order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Add a matrix initialized uniformly in `[-INIT_RANGE, INIT_RANGE]`.
    pub fn add_matrix(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> TensorId {
        let n = rows * cols;
        let values = (0..n)
            .map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE))
            .collect();
        self.push(ParamTensor {
            name: name.to_string(),
            shape: Shape::Matrix { rows, cols },
            values,
            grad: vec![0.0; n],
        })
    }

    /// Add a zero-initialized bias vector.
    pub fn add_zero_vector(&mut self, name: &str, len: usize) -> TensorId {
        self.push(ParamTensor {
            name: name.to_string(),
            shape: Shape::Vector { len },
            values: vec![0.0; len],
            grad: vec![0.0; len],
        })
    }

    fn push(&mut self, tensor: ParamTensor) -> TensorId {
        assert!(
            self.tensors.iter().all(|t| t.name != tensor.name),
            "duplicate tensor name {}",
            tensor.name
        );
        self.tensors.push(tensor);
        TensorId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, id: TensorId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.tensors[id.0].values
    }

    pub fn grad_mut(&mut self, id: TensorId) -> &mut [f64] {
        &mut self.tensors[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.iter_mut()
    }

    /// Row `row` of matrix tensor `id`.
    pub fn matrix_row(&self, id: TensorId, row: usize) -> &[f64] {
        let t = &self.tensors[id.0];
        let cols = match t.shape {
            Shape::Matrix { cols, .. } => cols,
            Shape::Vector { .. } => panic!("matrix_row on vector tensor {}", t.name),
        };
        &t.values[row * cols..(row + 1) * cols]
    }

    /// Accumulate `delta` into row `row` of the gradient of matrix `id`.
    pub fn accum_row_grad(&mut self, id: TensorId, row: usize, delta: &[f64]) {
        let t = &mut self.tensors[id.0];
        let cols = match t.shape {
            Shape::Matrix { cols, .. } => cols,
            Shape::Vector { .. } => panic!("accum_row_grad on vector tensor {}", t.name),
        };
        let dst = &mut t.grad[row * cols..(row + 1) * cols];
        for (d, g) in dst.iter_mut().zip(delta) {
            *d += g;
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            for g in &mut t.grad {
                *g = 0.0;
            }
        }
    }

    /// True when every value in every tensor is finite.
    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.values.iter().all(|v| v.is_finite()))
    }
}

/// `out = M x` for a row-major `rows x cols` matrix.
pub(crate) fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (w, v) in row.iter().zip(x) {
            acc += w * v;
        }
        *o = acc;
    }
}

/// `out += M^T dy` for a row-major `rows x cols` matrix.
pub(crate) fn matvec_t_accum(m: &[f64], rows: usize, cols: usize, dy: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(dy.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for i in 0..rows {
        let row = &m[i * cols..(i + 1) * cols];
        let d = dy[i];
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * d;
        }
    }
}

/// `grad += dy ⊗ x` accumulated into a row-major `len(dy) x len(x)` buffer.
pub(crate) fn outer_accum(grad: &mut [f64], dy: &[f64], x: &[f64]) {
    debug_assert_eq!(grad.len(), dy.len() * x.len());
    let cols = x.len();
    for (i, d) in dy.iter().enumerate() {
        let row = &mut grad[i * cols..(i + 1) * cols];
        for (g, v) in row.iter_mut().zip(x) {
            *g += d * v;
        }
    }
}

pub(crate) fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
