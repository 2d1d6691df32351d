//! Multiscale graph construction and learning.
//!
//! Each lookback window is subsampled at several temporal strides. Every
//! scaled view is oriented node-major (stations as rows) and passed through
//! two normalized graph convolutions with batch norm, ReLU and dropout in
//! between; the per-scale outputs are mapped by learned `g×g` matrices and
//! summed.
//!
//! Batches are processed as a vertical stack of per-window node matrices
//! (`B·N` rows), with the adjacency applied block-wise.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Matrix, Mode, NormStats, Param, Parameterized, Tape, Var};
use crate::error::{Error, Result, Shape};

/// Station graph with its symmetric-normalized, self-looped adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    n: usize,
    norm_adj: Arc<Matrix>,
}

impl GraphSpec {
    pub fn stations(&self) -> usize {
        self.n
    }

    pub fn norm_adj(&self) -> &Matrix {
        &self.norm_adj
    }

    pub(crate) fn operator(&self) -> Arc<Matrix> {
        self.norm_adj.clone()
    }
}

/// `D̃^{-1/2}(A + I)D̃^{-1/2}` for an arbitrary square adjacency `A`.
pub fn normalize_adjacency(adj: &Matrix) -> Result<Matrix> {
    let n = adj.rows();
    if adj.cols() != n {
        return Err(Error::dim("adjacency", adj.shape(), Shape(n, n)));
    }
    let mut with_loops = adj.clone();
    for i in 0..n {
        with_loops.set(i, i, adj.get(i, i) + 1.0);
    }
    let degree: Vec<f64> = (0..n).map(|i| with_loops.row(i).iter().sum()).collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            // √(dᵢdⱼ) rather than √dᵢ·√dⱼ keeps regular graphs exact.
            out.set(i, j, with_loops.get(i, j) / (degree[i] * degree[j]).sqrt());
        }
    }
    Ok(out)
}

/// Complete graph over `n` stations; every normalized entry equals `1/n`.
pub fn build_graph(n: usize) -> Result<GraphSpec> {
    if n == 0 {
        return Err(Error::Parameter("graph needs at least one station".into()));
    }
    let mut adj = Matrix::filled(n, n, 1.0);
    for i in 0..n {
        adj.set(i, i, 0.0);
    }
    Ok(GraphSpec {
        n,
        norm_adj: Arc::new(normalize_adjacency(&adj)?),
    })
}

/// Row indices kept at stride `scale`: anchored at the most recent row and
/// returned in chronological order.
pub fn scale_indices(lookback: usize, scale: usize) -> Result<Vec<usize>> {
    if scale < 1 {
        return Err(Error::Parameter(format!("scale {scale} must be ≥ 1")));
    }
    if lookback == 0 {
        return Err(Error::Parameter("lookback must be ≥ 1".into()));
    }
    let mut idx: Vec<usize> = (0..lookback).rev().step_by(scale).collect();
    idx.reverse();
    Ok(idx)
}

/// Number of rows a window of `lookback` keeps at stride `scale`.
pub fn scaled_len(lookback: usize, scale: usize) -> usize {
    lookback.div_ceil(scale.max(1)).max(1)
}

/// Subsamples a `τ×N` window at stride `scale`, keeping the last row.
pub fn scale_temporal(x: &Matrix, scale: usize) -> Result<Matrix> {
    let idx = scale_indices(x.rows(), scale)?;
    let rows: Vec<&[f64]> = idx.iter().map(|&i| x.row(i)).collect();
    Ok(Matrix::from_rows(&rows))
}

/// Batch normalization over rows with learned affine and running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Matrix,
    pub running_var: Matrix,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(prefix: &str, features: usize) -> Self {
        Self {
            gamma: Param::new(format!("{prefix}.gamma"), Matrix::filled(1, features, 1.0)),
            beta: Param::zeros(format!("{prefix}.beta"), 1, features),
            running_mean: Matrix::zeros(1, features),
            running_var: Matrix::filled(1, features, 1.0),
            momentum: 0.1,
        }
    }

    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var> {
        let gamma = tape.param(&mut self.gamma);
        let beta = tape.param(&mut self.beta);
        match mode {
            Mode::Train => {
                let (y, moments) = tape.batch_norm(x, gamma, beta, NormStats::Batch)?;
                let m = moments.expect("train mode yields moments");
                let unbias = if m.count > 1 {
                    m.count as f64 / (m.count - 1) as f64
                } else {
                    1.0
                };
                let k = self.momentum;
                for (r, v) in self.running_mean.data_mut().iter_mut().zip(&m.mean) {
                    *r = (1.0 - k) * *r + k * v;
                }
                for (r, v) in self.running_var.data_mut().iter_mut().zip(&m.var) {
                    *r = (1.0 - k) * *r + k * v * unbias;
                }
                Ok(y)
            }
            Mode::Eval => {
                let stats = NormStats::Running {
                    mean: self.running_mean.data(),
                    var: self.running_var.data(),
                };
                Ok(tape.batch_norm(x, gamma, beta, stats)?.0)
            }
        }
    }
}

/// Parameters of the graph-convolution block at one temporal scale.
#[derive(Debug, Clone)]
pub struct ScaleBlock {
    pub scale: usize,
    /// `ceil(τ/s) × h`
    pub w1: Param,
    pub bn: BatchNorm,
    /// `h × g`
    pub w2: Param,
    /// `g × g` fusion map.
    pub fusion: Param,
    pub dropout: f64,
}

impl ScaleBlock {
    pub fn new(
        lookback: usize,
        scale: usize,
        hidden: usize,
        graph_out: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let prefix = format!("mgcl.s{scale}");
        let len = scaled_len(lookback, scale);
        Self {
            scale,
            w1: Param::glorot(format!("{prefix}.w1"), len, hidden, rng),
            bn: BatchNorm::new(&format!("{prefix}.bn"), hidden),
            w2: Param::glorot(format!("{prefix}.w2"), hidden, graph_out, rng),
            fusion: Param::glorot(format!("{prefix}.fusion"), graph_out, graph_out, rng),
            dropout,
        }
    }

    /// `G = Â·dropout(ReLU(BN(Â·V·W₁)))·W₂` for node-major input `V` of
    /// shape `(B·N) × ceil(τ/s)`.
    pub fn forward(&mut self, tape: &mut Tape, graph: &GraphSpec, v: Var, mode: Mode) -> Result<Var> {
        let vs = tape.value(v).shape();
        if vs.1 != self.w1.value().rows() {
            return Err(Error::dim(
                format!("graph conv at scale {} (input vs W1)", self.scale),
                vs,
                self.w1.value().shape(),
            ));
        }
        let w1 = tape.param(&mut self.w1);
        let xw = tape.matmul(v, w1)?;
        let axw = tape.block_propagate(graph.operator(), xw)?;
        let normed = self.bn.forward(tape, axw, mode)?;
        let h = tape.relu(normed);
        let r = tape.dropout(h, self.dropout, mode)?;
        let w2 = tape.param(&mut self.w2);
        let rw = tape.matmul(r, w2)?;
        tape.block_propagate(graph.operator(), rw)
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w1);
        f(&mut self.bn.gamma);
        f(&mut self.bn.beta);
        f(&mut self.w2);
        f(&mut self.fusion);
    }
}

/// Stacks each window's scaled view node-major: row `b·N + n` holds station
/// `n`'s subsampled history in window `b`.
pub fn node_major_scaled(windows: &[&Matrix], scale: usize) -> Result<Matrix> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Contract("empty batch".into()))?;
    let (tau, n) = (first.rows(), first.cols());
    let idx = scale_indices(tau, scale)?;
    let mut out = Matrix::zeros(windows.len() * n, idx.len());
    for (b, w) in windows.iter().enumerate() {
        if w.shape() != first.shape() {
            return Err(Error::dim("batch windows", first.shape(), w.shape()));
        }
        for station in 0..n {
            let row = out.row_mut(b * n + station);
            for (dst, &t) in row.iter_mut().zip(&idx) {
                *dst = w.get(t, station);
            }
        }
    }
    Ok(out)
}

/// `Σᵢ Gᵢ·Wᵢ`, reduced in the given (ascending scale) order.
pub fn multiscale_fuse(tape: &mut Tape, blocks: &[Var], maps: &[Var]) -> Result<Var> {
    if blocks.is_empty() {
        return Err(Error::Config("multiscale fusion needs at least one scale".into()));
    }
    if blocks.len() != maps.len() {
        return Err(Error::dim(
            "multiscale fusion",
            Shape(blocks.len(), 1),
            Shape(maps.len(), 1),
        ));
    }
    let mut acc: Option<Var> = None;
    for (&g, &w) in blocks.iter().zip(maps) {
        let term = tape.matmul(g, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("nonempty"))
}

/// The full multiscale graph branch.
#[derive(Debug, Clone)]
pub struct Mgcl {
    pub graph: GraphSpec,
    pub blocks: Vec<ScaleBlock>,
}

impl Mgcl {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        lookback: usize,
        stations: usize,
        scales: &[usize],
        hidden: usize,
        graph_out: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Config("scale set is empty".into()));
        }
        let mut sorted = scales.to_vec();
        sorted.sort_unstable();
        let blocks = sorted
            .iter()
            .map(|&s| ScaleBlock::new(lookback, s, hidden, graph_out, dropout, rng))
            .collect();
        Ok(Self {
            graph: build_graph(stations)?,
            blocks,
        })
    }

    /// `G_out` for a batch of `τ×N` windows, shaped `(B·N) × g`.
    pub fn forward(&mut self, tape: &mut Tape, windows: &[&Matrix], mode: Mode) -> Result<Var> {
        if let Some(w) = windows.first() {
            if w.cols() != self.graph.stations() {
                return Err(Error::dim(
                    "mgcl input stations",
                    w.shape(),
                    Shape(w.rows(), self.graph.stations()),
                ));
            }
        }
        let mut outs = Vec::with_capacity(self.blocks.len());
        let mut maps = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let v = tape.constant(node_major_scaled(windows, block.scale)?);
            outs.push(block.forward(tape, &self.graph, v, mode)?);
            maps.push(tape.param(&mut block.fusion));
        }
        multiscale_fuse(tape, &outs, &maps)
    }
}

impl Parameterized for Mgcl {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for b in &mut self.blocks {
            b.visit(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        for b in &mut self.blocks {
            let prefix = format!("mgcl.s{}.bn", b.scale);
            f(&format!("{prefix}.running_mean"), &mut b.bn.running_mean);
            f(&format!("{prefix}.running_var"), &mut b.bn.running_var);
        }
    }
}

/// Runs one scale block on a single scaled window `Xs` (`ceil(τ/s) × N`),
/// returning `G` as an `N×g` matrix.
pub fn graph_conv_block(
    xs: &Matrix,
    graph: &GraphSpec,
    block: &mut ScaleBlock,
    mode: Mode,
) -> Result<Matrix> {
    if xs.cols() != graph.stations() {
        return Err(Error::dim(
            format!("graph conv at scale {} (stations)", block.scale),
            xs.shape(),
            Shape(xs.rows(), graph.stations()),
        ));
    }
    let mut tape = Tape::new();
    let v = tape.constant(xs.transpose());
    let g = block.forward(&mut tape, graph, v, mode)?;
    Ok(tape.value(g).clone())
}
