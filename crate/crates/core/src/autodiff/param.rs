use rand::Rng;

use super::matrix::Matrix;
use super::tape::{Tape, Var};

/// A trainable tensor: value, same-shape gradient buffer and its node on the
/// current tape (if registered).
#[derive(Debug, Clone)]
pub struct Param {
    name: String,
    pub(crate) value: Matrix,
    pub(crate) grad: Matrix,
    pub(crate) node: Option<Var>,
}

impl PartialEq for Param {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.value == other.value
    }
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            name: name.into(),
            value,
            grad,
            node: None,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::new(name, Matrix::zeros(rows, cols))
    }

    /// Glorot/Xavier uniform initialization over `[-l, l]`, `l = √(6/(rows+cols))`.
    pub fn glorot(name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self::new(name, Matrix::from_vec(rows, cols, data).expect("sized buffer"))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Matrix {
        &mut self.value
    }

    pub fn grad(&self) -> &Matrix {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut Matrix {
        &mut self.grad
    }

    /// Replaces the value; the gradient buffer is resized and cleared.
    pub fn set_value(&mut self, value: Matrix) {
        self.grad = Matrix::zeros(value.rows(), value.cols());
        self.value = value;
        self.node = None;
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Adds this parameter's gradient from `tape` into the buffer and
    /// detaches it from the tape.
    pub fn absorb_grad(&mut self, tape: &Tape) {
        if let Some(v) = self.node.take() {
            if tape.owns(v) {
                if let Some(g) = tape.grad(v) {
                    self.grad.add_assign(g);
                }
            }
        }
    }
}

/// Anything owning a fixed, ordered set of [`Param`]s.
///
/// The visit order defines the checkpoint layout and optimizer state order,
/// so implementations must always visit the same parameters in the same order.
pub trait Parameterized {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param));

    /// Non-trainable state that must be persisted (e.g. batch-norm running stats).
    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&str, &mut Matrix)) {}

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    fn absorb_grads(&mut self, tape: &Tape) {
        self.visit_params(&mut |p| p.absorb_grad(tape));
    }

    /// Euclidean norm over all gradient buffers.
    fn grad_norm(&mut self) -> f64 {
        let mut s = 0.0;
        self.visit_params(&mut |p| s += p.grad.data().iter().map(|g| g * g).sum::<f64>());
        s.sqrt()
    }

    /// Flattened copy of every parameter value in visit order.
    fn snapshot(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.extend_from_slice(p.value.data()));
        out
    }
}
