//! Wengert-list tape for reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its forward value and enough saved
//! state to compute the vector-Jacobian product. [`Tape::backward`] walks the
//! nodes in exact reverse order and accumulates gradients into every node that
//! transitively depends on a trainable leaf.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::{gemm_nt, gemm_tn, Matrix};
use super::param::Param;
use crate::error::{Error, Result, Shape};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Epsilon added to the variance in batch normalization.
pub const BN_EPSILON: f64 = 1e-5;

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Train or inference behaviour for dropout and batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Statistics a batch-normalization node should normalize with.
#[derive(Debug, Clone, Copy)]
pub enum NormStats<'a> {
    /// Per-feature mean and population variance of the current batch.
    Batch,
    /// Previously accumulated running estimates.
    Running { mean: &'a [f64], var: &'a [f64] },
}

/// Per-feature moments observed by a train-mode batch-norm node.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Population variance.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRowBias(usize, usize),
    Scale(usize, f64),
    Act(usize, Activation),
    ConcatCols(usize, usize),
    Gather(usize, Arc<[usize]>),
    BlockPropagate(usize, Arc<Matrix>),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Matrix,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dropout(usize, Vec<f64>),
    SumAll(usize),
    Huber {
        pred: usize,
        target: Matrix,
        delta: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Scale(..) => "scale",
            Op::Act(..) => "activation",
            Op::ConcatCols(..) => "concat_cols",
            Op::Gather(..) => "gather",
            Op::BlockPropagate(..) => "block_propagate",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Dropout(..) => "dropout",
            Op::SumAll(..) => "sum",
            Op::Huber { .. } => "huber_loss",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
    backward_order: Vec<usize>,
    rng: ChaCha8Rng,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_seed(0)
    }

    /// A tape whose dropout masks are drawn from a generator seeded with `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_order: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Drops all recorded nodes and reseeds the dropout generator.
    ///
    /// Handles issued before the reset are no longer valid on this tape.
    pub fn reset(&mut self, seed: u64) {
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
        self.nodes.clear();
        self.grads.clear();
        self.backward_order.clear();
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of recorded operations in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    /// Node indices visited by the most recent backward pass, in visit order.
    pub fn backward_order(&self) -> &[usize] {
        &self.backward_order
    }

    pub fn owns(&self, var: Var) -> bool {
        var.tape == self.id && var.index < self.nodes.len()
    }

    fn check(&self, var: Var) -> usize {
        assert!(
            self.owns(var),
            "variable {var:?} does not belong to tape {}",
            self.id
        );
        var.index
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[self.check(var)].value
    }

    /// Gradient of the last backward pass with respect to `var`, if it was reached.
    pub fn grad(&self, var: Var) -> Option<&Matrix> {
        let i = self.check(var);
        self.grads.get(i).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// A leaf that does not receive gradients (data, targets).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives gradients but is not bound to a [`Param`].
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a parameter on this tape, reusing its node if already present.
    pub fn param(&mut self, param: &mut Param) -> Var {
        if let Some(v) = param.node {
            if self.owns(v) {
                return v;
            }
        }
        let v = self.push(param.value.clone(), Op::Leaf, true);
        param.node = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a), self.check(b));
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let out = va.matmul(vb)?;
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.push(out, Op::MatMul(ia, ib), needs))
    }

    fn same_shape(&self, ctx: &str, ia: usize, ib: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        if sa != sb {
            return Err(Error::dim(ctx, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a), self.check(b));
        self.same_shape("add", ia, ib)?;
        let out = self.nodes[ia]
            .value
            .zip_map(&self.nodes[ib].value, |x, y| x + y);
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.push(out, Op::Add(ia, ib), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a), self.check(b));
        self.same_shape("sub", ia, ib)?;
        let out = self.nodes[ia]
            .value
            .zip_map(&self.nodes[ib].value, |x, y| x - y);
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.push(out, Op::Sub(ia, ib), needs))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a), self.check(b));
        self.same_shape("mul", ia, ib)?;
        let out = self.nodes[ia]
            .value
            .zip_map(&self.nodes[ib].value, |x, y| x * y);
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.push(out, Op::Mul(ia, ib), needs))
    }

    /// Adds a `1×n` bias to every row of an `m×n` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x), self.check(bias));
        let (xv, bv) = (&self.nodes[ix].value, &self.nodes[ib].value);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::dim("add_row_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let needs = self.needs(ix) || self.needs(ib);
        Ok(self.push(out, Op::AddRowBias(ix, ib), needs))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let ix = self.check(x);
        let out = self.nodes[ix].value.map(|v| v * factor);
        let needs = self.needs(ix);
        self.push(out, Op::Scale(ix, factor), needs)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let ix = self.check(x);
        let out = self.nodes[ix].value.map(|v| kind.apply(v));
        let needs = self.needs(ix);
        self.push(out, Op::Act(ix, kind), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    /// `[a, b]` side by side; both must have the same row count.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a), self.check(b));
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.rows() != vb.rows() {
            return Err(Error::dim("concat_cols", va.shape(), vb.shape()));
        }
        let cols = va.cols() + vb.cols();
        let mut out = Matrix::zeros(va.rows(), cols);
        for r in 0..va.rows() {
            let row = out.row_mut(r);
            row[..va.cols()].copy_from_slice(va.row(r));
            row[va.cols()..].copy_from_slice(vb.row(r));
        }
        let needs = self.needs(ia) || self.needs(ib);
        Ok(self.push(out, Op::ConcatCols(ia, ib), needs))
    }

    /// `out.data[i] = x.data[index[i]]` with the result shaped `rows×cols`.
    ///
    /// Covers transposes, reshapes and row selection; the backward pass
    /// scatter-adds into the source.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>, rows: usize, cols: usize) -> Result<Var> {
        let ix = self.check(x);
        let src = &self.nodes[ix].value;
        if index.len() != rows * cols {
            return Err(Error::dim("gather", Shape(index.len(), 1), Shape(rows, cols)));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(Error::dim("gather", src.shape(), Shape(bad, 1)));
        }
        let data = index.iter().map(|&i| src.data()[i]).collect();
        let out = Matrix::from_vec(rows, cols, data)?;
        let needs = self.needs(ix);
        Ok(self.push(out, Op::Gather(ix, index), needs))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let (r, c) = (shape.0, shape.1);
        let index: Arc<[usize]> = (0..c)
            .flat_map(|j| (0..r).map(move |i| i * c + j))
            .collect();
        self.gather(x, index, c, r)
    }

    /// Applies an `n×n` operator to each consecutive block of `n` rows of `x`.
    ///
    /// For a stack of `B` per-window node matrices this computes `A·X_b` for
    /// every window `b` without materializing a block-diagonal operator.
    pub fn block_propagate(&mut self, op: Arc<Matrix>, x: Var) -> Result<Var> {
        let ix = self.check(x);
        let xv = &self.nodes[ix].value;
        let n = op.rows();
        if op.cols() != n || n == 0 || !xv.rows().is_multiple_of(n) {
            return Err(Error::dim("block_propagate", op.shape(), xv.shape()));
        }
        let out = block_apply(&op, xv, false);
        let needs = self.needs(ix);
        Ok(self.push(out, Op::BlockPropagate(ix, op), needs))
    }

    /// Per-column batch normalization of an `n×f` matrix.
    ///
    /// With [`NormStats::Batch`] the rows are normalized by their own mean and
    /// population variance and the observed moments are returned so the
    /// caller can update running estimates. A zero-variance column maps to
    /// `beta` because the variance is floored by [`BN_EPSILON`].
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_>,
    ) -> Result<(Var, Option<BatchMoments>)> {
        let (ix, ig, ib) = (self.check(x), self.check(gamma), self.check(beta));
        let xv = &self.nodes[ix].value;
        let (n, f) = (xv.rows(), xv.cols());
        for (name, i) in [("batch_norm gamma", ig), ("batch_norm beta", ib)] {
            let s = self.nodes[i].value.shape();
            if s != Shape(1, f) {
                return Err(Error::dim(name, Shape(1, f), s));
            }
        }
        if n == 0 {
            return Err(Error::Contract("batch_norm needs at least one row".into()));
        }
        let (mean, var, batch_stats) = match stats {
            NormStats::Batch => {
                let mut mean = vec![0.0; f];
                for r in 0..n {
                    for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; f];
                for r in 0..n {
                    for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                (mean, var, true)
            }
            NormStats::Running { mean, var } => {
                if mean.len() != f || var.len() != f {
                    return Err(Error::dim(
                        "batch_norm running stats",
                        Shape(1, f),
                        Shape(mean.len(), var.len()),
                    ));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let mut xhat = Matrix::zeros(n, f);
        for r in 0..n {
            for (c, h) in xhat.row_mut(r).iter_mut().enumerate() {
                *h = (xv.get(r, c) - mean[c]) * inv_std[c];
            }
        }
        let (gv, bv) = (self.nodes[ig].value.data(), self.nodes[ib].value.data());
        let mut out = Matrix::zeros(n, f);
        for r in 0..n {
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = gv[c] * xhat.get(r, c) + bv[c];
            }
        }
        let needs = self.needs(ix) || self.needs(ig) || self.needs(ib);
        let moments = batch_stats.then_some(BatchMoments {
            mean,
            var,
            count: n,
        });
        let v = self.push(
            out,
            Op::BatchNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                xhat,
                inv_std,
                batch_stats,
            },
            needs,
        );
        Ok((v, moments))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` at train time and
    /// eval mode is the identity.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        let ix = self.check(x);
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let len = self.nodes[ix].value.len();
        let mask: Vec<f64> = (0..len)
            .map(|_| {
                if self.rng.random::<f64>() < p {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let xv = &self.nodes[ix].value;
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Matrix::from_vec(xv.rows(), xv.cols(), data)?;
        let needs = self.needs(ix);
        Ok(self.push(out, Op::Dropout(ix, mask), needs))
    }

    /// Sum of all elements as a `1×1` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let ix = self.check(x);
        let s = self.nodes[ix].value.sum();
        let needs = self.needs(ix);
        self.push(Matrix::filled(1, 1, s), Op::SumAll(ix), needs)
    }

    /// Mean Huber loss between `pred` and a constant `target`.
    pub fn huber_loss(&mut self, pred: Var, target: &Matrix, delta: f64) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(Error::Parameter(format!("huber delta {delta} must be > 0")));
        }
        let ip = self.check(pred);
        let pv = &self.nodes[ip].value;
        if pv.shape() != target.shape() {
            return Err(Error::dim("huber_loss", pv.shape(), target.shape()));
        }
        if pv.is_empty() {
            return Err(Error::Contract("huber_loss over an empty tensor".into()));
        }
        let total: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| huber(p - t, delta))
            .sum();
        let loss = total / pv.len() as f64;
        let needs = self.needs(ip);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::Huber {
                pred: ip,
                target: target.clone(),
                delta,
            },
            needs,
        ))
    }

    /// Populates gradients of the scalar `loss` with respect to every node
    /// that depends on a trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.check(loss);
        let shape = self.nodes[il].value.shape();
        if shape != Shape(1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {shape}"
            )));
        }
        let Tape {
            nodes,
            grads,
            backward_order,
            ..
        } = self;
        *grads = (0..nodes.len()).map(|_| None).collect();
        backward_order.clear();
        grads[il] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=il).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            backward_order.push(i);
            let mut sink = GradSink { nodes, grads };
            sink.propagate(i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

/// Gradient accumulator borrowed during a backward pass.
struct GradSink<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Matrix>],
}

impl GradSink<'_> {
    fn accumulate(&mut self, target: usize, contribution: Matrix) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut self.grads[target] {
            Some(g) => g.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn accumulate_with(&mut self, target: usize, f: impl FnOnce(&mut Matrix)) {
        if !self.nodes[target].needs_grad {
            return;
        }
        let shape = self.nodes[target].value.shape();
        let g = self.grads[target].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1));
        f(g);
    }

    /// Pushes the upstream gradient `g` of node `i` into its inputs.
    fn propagate(&mut self, i: usize, g: &Matrix) {
        let nodes = self.nodes;
        let node = &nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                self.accumulate_with(*a, |ga| gemm_nt(g, vb, ga));
                self.accumulate_with(*b, |gb| gemm_tn(va, g, gb));
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                self.accumulate(*a, g.zip_map(vb, |x, y| x * y));
                self.accumulate(*b, g.zip_map(va, |x, y| x * y));
            }
            Op::AddRowBias(x, b) => {
                self.accumulate(*x, g.clone());
                self.accumulate_with(*b, |gb| {
                    for r in 0..g.rows() {
                        for (s, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                });
            }
            Op::Scale(x, factor) => {
                let factor = *factor;
                self.accumulate(*x, g.map(|v| v * factor));
            }
            Op::Act(x, kind) => {
                let y = &node.value;
                let local = match kind {
                    Activation::Relu => {
                        g.zip_map(&nodes[*x].value, |gv, xv| if xv > 0.0 { gv } else { 0.0 })
                    }
                    Activation::Sigmoid => g.zip_map(y, |gv, s| gv * s * (1.0 - s)),
                    Activation::Tanh => g.zip_map(y, |gv, t| gv * (1.0 - t * t)),
                };
                self.accumulate(*x, local);
            }
            Op::ConcatCols(a, b) => {
                let ca = nodes[*a].value.cols();
                let cb = nodes[*b].value.cols();
                let mut ga = Matrix::zeros(g.rows(), ca);
                let mut gb = Matrix::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Gather(x, index) => {
                self.accumulate_with(*x, |gx| {
                    let dst = gx.data_mut();
                    for (&src, &v) in index.iter().zip(g.data()) {
                        dst[src] += v;
                    }
                });
            }
            Op::BlockPropagate(x, op) => {
                self.accumulate(*x, block_apply(op, g, true));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let gv = nodes[*gamma].value.data();
                let (n, f) = (g.rows(), g.cols());
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                for r in 0..n {
                    for c in 0..f {
                        dgamma[c] += g.get(r, c) * xhat.get(r, c);
                        dbeta[c] += g.get(r, c);
                    }
                }
                let mut dx = Matrix::zeros(n, f);
                if *batch_stats {
                    // dx = γσ⁻¹/n · (n·g − Σg − x̂·Σ(g·x̂))
                    let nf = n as f64;
                    for r in 0..n {
                        for c in 0..f {
                            let v = gv[c] * inv_std[c] / nf
                                * (nf * g.get(r, c) - dbeta[c] - xhat.get(r, c) * dgamma[c]);
                            dx.set(r, c, v);
                        }
                    }
                } else {
                    for r in 0..n {
                        for c in 0..f {
                            dx.set(r, c, g.get(r, c) * gv[c] * inv_std[c]);
                        }
                    }
                }
                self.accumulate(*x, dx);
                self.accumulate(*gamma, Matrix::row_vector(&dgamma));
                self.accumulate(*beta, Matrix::row_vector(&dbeta));
            }
            Op::Dropout(x, mask) => {
                let mut local = g.clone();
                for (v, m) in local.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                self.accumulate(*x, local);
            }
            Op::SumAll(x) => {
                let s = nodes[*x].value.shape();
                self.accumulate(*x, Matrix::filled(s.0, s.1, g.get(0, 0)));
            }
            Op::Huber {
                pred,
                target,
                delta,
            } => {
                let pv = &nodes[*pred].value;
                let scale = g.get(0, 0) / pv.len() as f64;
                let d = *delta;
                self.accumulate(*pred, pv.zip_map(target, |p, t| (p - t).clamp(-d, d) * scale));
            }
        }
    }
}

fn block_apply(op: &Matrix, x: &Matrix, transpose_op: bool) -> Matrix {
    let n = op.rows();
    let f = x.cols();
    let mut out = Matrix::zeros(x.rows(), f);
    for block in 0..x.rows() / n {
        let base = block * n;
        for i in 0..n {
            for k in 0..n {
                let a = if transpose_op { op.get(k, i) } else { op.get(i, k) };
                if a == 0.0 {
                    continue;
                }
                let src = base + k;
                for c in 0..f {
                    let v = x.get(src, c);
                    let cur = out.get(base + i, c);
                    out.set(base + i, c, cur + a * v);
                }
            }
        }
    }
    out
}

/// Scalar Huber penalty.
pub fn huber(error: f64, delta: f64) -> f64 {
    let a = error.abs();
    if a <= delta {
        0.5 * error * error
    } else {
        delta * (a - 0.5 * delta)
    }
}
