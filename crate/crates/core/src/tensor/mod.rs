//! Dense float64 tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is the plain value carrier (shape + row-major values + an
//! optional gradient). Differentiable computation happens on a [`Tape`]:
//! leaves are registered, operations record themselves in execution order,
//! and [`Tape::backward`] replays the record once in reverse.
//!
//! Free functions here cover the non-tape utilities: global-norm gradient
//! clipping and the central finite-difference oracle used to cross-check
//! every analytic backward rule.

mod tape;

pub use tape::{ElementwiseKind, ReduceKind, Tape, ValueId};

use crate::error::{Error, Result};

/// Dense n-dimensional float64 array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    trainable: bool,
}

impl Tensor {
    pub fn new(values: Vec<f64>, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        if numel != values.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} wants {numel} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values, grad: None, trainable: false })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel = shape.iter().product();
        Tensor { shape, values: vec![0.0; numel], grad: None, trainable: false }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1], values: vec![v], grad: None, trainable: false }
    }

    /// Rank-1 tensor from a value list.
    pub fn vector(values: Vec<f64>) -> Tensor {
        let n = values.len();
        Tensor { shape: vec![n], values, grad: None, trainable: false }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Tensor> {
        Tensor::new(values, vec![rows, cols])
    }

    pub fn with_trainable(mut self, trainable: bool) -> Tensor {
        self.trainable = trainable;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f64>>) {
        if let Some(g) = &grad {
            debug_assert_eq!(g.len(), self.values.len());
        }
        self.grad = grad;
    }
}

/// Squared-sum-root norm over every element of every gradient.
pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Scale all gradients so their global norm does not exceed `max_norm`.
///
/// Rescaling repeats until the recomputed norm is within bound, so the
/// returned norm is never above `max_norm` and a second call is a bitwise
/// no-op. Returns the post-clip global norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    debug_assert!(max_norm > 0.0);
    let mut norm = global_norm(grads);
    let mut rounds = 0;
    while norm > max_norm && norm.is_finite() && rounds < 8 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
        norm = global_norm(grads);
        rounds += 1;
    }
    norm
}

/// Central finite differences of a scalar function, element by element:
/// `(f(x + eps·e_k) - f(x - eps·e_k)) / (2 eps)`.
///
/// This is the independent oracle against which every analytic backward
/// rule is checked; it never touches the tape's gradient code.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::contract("finite_diff_grad: eps must be positive"));
    }
    let mut grad = vec![0.0; x.numel()];
    let mut probe = x.clone();
    for k in 0..x.numel() {
        let orig = probe.values()[k];
        probe.values_mut()[k] = orig + eps;
        let f_plus = f(&probe)?;
        probe.values_mut()[k] = orig - eps;
        let f_minus = f(&probe)?;
        probe.values_mut()[k] = orig;
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(Error::domain(format!(
                "finite_diff_grad: non-finite evaluation at element {k}"
            )));
        }
        grad[k] = (f_plus - f_minus) / (2.0 * eps);
    }
    Tensor::new(grad, x.shape().to_vec())
}

/// Worst-case relative error between analytic and numeric gradients.
///
/// Per element: `|a - n| / (max(|a|, |n|) + 1e-3)`. The additive floor
/// turns the comparison absolute for near-zero entries, where central
/// differences only resolve to roundoff.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    debug_assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs().max(n.abs()) + 1e-3))
        .fold(0.0, f64::max)
}
