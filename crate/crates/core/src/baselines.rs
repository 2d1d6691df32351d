//! Comparison forecasters: two training-free rules and four learned
//! networks sharing the [`Network`] interface.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, Mode, Param, Parameterized, Tape, Var};
use crate::error::{Error, Result};
use crate::network::{check_batch, flatten_windows, node_major, ModelTag, Network};
use crate::tenn::{node_major_to_window_major, LstmParams};

/// Hidden width used by the learned baselines.
pub const BASELINE_HIDDEN: usize = 16;
/// Moving-average kernel of the trend decomposition.
pub const DLINEAR_KERNEL: usize = 25;

/// Mean of the last `w` rows per station, repeated for `horizon` steps.
pub fn ma_forecast(x: &Matrix, window: usize, horizon: usize) -> Result<Matrix> {
    if window < 1 || window > x.rows() {
        return Err(Error::Parameter(format!(
            "moving-average window {window} outside [1, {}]",
            x.rows()
        )));
    }
    let n = x.cols();
    let mut mean = vec![0.0; n];
    for r in x.rows() - window..x.rows() {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= window as f64);
    let rows: Vec<&[f64]> = (0..horizon).map(|_| mean.as_slice()).collect();
    Ok(if horizon == 0 { Matrix::zeros(0, n) } else { Matrix::from_rows(&rows) })
}

/// The last `horizon` rows of the window, unchanged.
pub fn hi_forecast(x: &Matrix, horizon: usize) -> Result<Matrix> {
    if horizon > x.rows() {
        return Err(Error::Parameter(format!(
            "horizon {horizon} exceeds lookback {}",
            x.rows()
        )));
    }
    Ok(x.slice_rows(x.rows() - horizon, x.rows()))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Linear readout `d → α·N` with bias.
#[derive(Debug, Clone)]
pub struct Head {
    pub w: Param,
    pub b: Param,
}

impl Head {
    fn new(prefix: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: Param::glorot(format!("{prefix}.w"), inputs, outputs, rng),
            b: Param::zeros(format!("{prefix}.b"), 1, outputs),
        }
    }

    fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(&mut self.w);
        let b = tape.param(&mut self.b);
        let xw = tape.matmul(x, w)?;
        tape.add_row_bias(xw, b)
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

/// Shape shared by every baseline network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub lookback: usize,
    pub horizon: usize,
    pub stations: usize,
}

impl Dims {
    fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 || self.stations == 0 {
            return Err(Error::Parameter(format!(
                "lookback, horizon and stations must be ≥ 1 (got {}, {}, {})",
                self.lookback, self.horizon, self.stations
            )));
        }
        Ok(())
    }

    fn out(&self) -> usize {
        self.horizon * self.stations
    }
}

/// Flattened window → hidden (ReLU) → flattened forecast.
#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Dims,
    pub hidden: Head,
    pub out: Head,
}

impl Mlp {
    pub fn new(dims: Dims, hidden: usize, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut r = rng(seed);
        Ok(Self {
            dims,
            hidden: Head::new("mlp.hidden", dims.lookback * dims.stations, hidden, &mut r),
            out: Head::new("mlp.out", hidden, dims.out(), &mut r),
        })
    }
}

/// Single-layer gated recurrent unit with a linear head on the final state.
#[derive(Debug, Clone)]
pub struct Gru {
    dims: Dims,
    /// Update, reset, candidate; each `(d + N) × d` on `[h, x]`
    /// (the candidate sees `[r⊙h, x]`).
    pub weights: [Param; 3],
    pub biases: [Param; 3],
    pub head: Head,
}

impl Gru {
    pub fn new(dims: Dims, hidden: usize, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut r = rng(seed);
        let weights = ["update", "reset", "candidate"]
            .map(|g| Param::glorot(format!("gru.w_{g}"), hidden + dims.stations, hidden, &mut r));
        let biases = ["update", "reset", "candidate"].map(|g| Param::zeros(format!("gru.b_{g}"), 1, hidden));
        let head = Head::new("gru.head", hidden, dims.out(), &mut r);
        Ok(Self {
            dims,
            weights,
            biases,
            head,
        })
    }

    fn gate(&mut self, tape: &mut Tape, k: usize, z: Var) -> Result<Var> {
        let w = tape.param(&mut self.weights[k]);
        let b = tape.param(&mut self.biases[k]);
        let zw = tape.matmul(z, w)?;
        tape.add_row_bias(zw, b)
    }
}

/// The temporal branch's LSTM cell followed by a linear head.
#[derive(Debug, Clone)]
pub struct LstmBaseline {
    dims: Dims,
    pub cell: LstmParams,
    pub head: Head,
}

impl LstmBaseline {
    pub fn new(dims: Dims, hidden: usize, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut r = rng(seed);
        let cell = LstmParams::new("lstm", dims.stations, hidden, &mut r);
        let head = Head::new("lstm.head", hidden, dims.out(), &mut r);
        Ok(Self { dims, cell, head })
    }
}

/// Trend/remainder decomposition with a separate `τ→α` linear map for
/// each component, shared across stations.
#[derive(Debug, Clone)]
pub struct Dlinear {
    dims: Dims,
    kernel: usize,
    pub trend: Head,
    pub remainder: Head,
}

impl Dlinear {
    pub fn new(dims: Dims, kernel: usize, seed: u64) -> Result<Self> {
        dims.validate()?;
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(Error::Parameter(format!("decomposition kernel {kernel} must be odd")));
        }
        let mut r = rng(seed);
        Ok(Self {
            dims,
            kernel,
            trend: Head::new("dlinear.trend", dims.lookback, dims.horizon, &mut r),
            remainder: Head::new("dlinear.remainder", dims.lookback, dims.horizon, &mut r),
        })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }
}

/// Centered moving average over each column with the first and last rows
/// replicated as padding; returns `(trend, remainder)`.
pub fn decompose(x: &Matrix, kernel: usize) -> (Matrix, Matrix) {
    let (t, n) = (x.rows(), x.cols());
    let half = kernel / 2;
    let mut trend = Matrix::zeros(t, n);
    for r in 0..t {
        for c in 0..n {
            let mut acc = 0.0;
            for k in 0..kernel {
                let src = (r + k).saturating_sub(half).min(t - 1);
                acc += x.get(src, c);
            }
            trend.set(r, c, acc / kernel as f64);
        }
    }
    let remainder = x.zip_map(&trend, |a, b| a - b);
    (trend, remainder)
}

macro_rules! dims_accessors {
    () => {
        fn lookback(&self) -> usize {
            self.dims.lookback
        }
        fn horizon(&self) -> usize {
            self.dims.horizon
        }
        fn stations(&self) -> usize {
            self.dims.stations
        }
    };
}

impl Network for Mlp {
    fn tag(&self) -> ModelTag {
        ModelTag::Mlp
    }
    dims_accessors!();

    fn forward(&mut self, tape: &mut Tape, windows: &[&Matrix], _mode: Mode) -> Result<Var> {
        check_batch(windows, self.dims.lookback, self.dims.stations, "mlp")?;
        let x = tape.constant(flatten_windows(windows));
        let h = self.hidden.forward(tape, x)?;
        let h = tape.relu(h);
        self.out.forward(tape, h)
    }
}

impl Network for Gru {
    fn tag(&self) -> ModelTag {
        ModelTag::Gru
    }
    dims_accessors!();

    fn forward(&mut self, tape: &mut Tape, windows: &[&Matrix], _mode: Mode) -> Result<Var> {
        let Dims { lookback, stations, .. } = self.dims;
        check_batch(windows, lookback, stations, "gru")?;
        let b = windows.len();
        let hidden = self.weights[0].value().cols();
        let mut h = tape.constant(Matrix::zeros(b, hidden));
        let ones = tape.constant(Matrix::filled(b, hidden, 1.0));
        for t in 0..lookback {
            let mut xt = Matrix::zeros(b, stations);
            for (r, w) in windows.iter().enumerate() {
                xt.row_mut(r).copy_from_slice(w.row(t));
            }
            let x = tape.constant(xt);
            let hx = tape.concat_cols(h, x)?;
            let zu = self.gate(tape, 0, hx)?;
            let update = tape.sigmoid(zu);
            let zr = self.gate(tape, 1, hx)?;
            let reset = tape.sigmoid(zr);
            let rh = tape.mul(reset, h)?;
            let rhx = tape.concat_cols(rh, x)?;
            let zc = self.gate(tape, 2, rhx)?;
            let cand = tape.tanh(zc);
            // h' = (1 − u)⊙ĥ + u⊙h
            let keep = tape.sub(ones, update)?;
            let fresh = tape.mul(keep, cand)?;
            let old = tape.mul(update, h)?;
            h = tape.add(fresh, old)?;
        }
        self.head.forward(tape, h)
    }
}

impl Network for LstmBaseline {
    fn tag(&self) -> ModelTag {
        ModelTag::Lstm
    }
    dims_accessors!();

    fn forward(&mut self, tape: &mut Tape, windows: &[&Matrix], _mode: Mode) -> Result<Var> {
        check_batch(windows, self.dims.lookback, self.dims.stations, "lstm")?;
        let h = self.cell.forward(tape, windows)?;
        self.head.forward(tape, h)
    }
}

impl Network for Dlinear {
    fn tag(&self) -> ModelTag {
        ModelTag::Dlinear
    }
    dims_accessors!();

    fn forward(&mut self, tape: &mut Tape, windows: &[&Matrix], _mode: Mode) -> Result<Var> {
        let Dims { lookback, horizon, stations } = self.dims;
        check_batch(windows, lookback, stations, "dlinear")?;
        let b = windows.len();
        let mut trends = Vec::with_capacity(b);
        let mut rems = Vec::with_capacity(b);
        for w in windows {
            let (t, r) = decompose(w, self.kernel);
            trends.push(t);
            rems.push(r);
        }
        let trend = tape.constant(node_major(&trends.iter().collect::<Vec<_>>()));
        let rem = tape.constant(node_major(&rems.iter().collect::<Vec<_>>()));
        let yt = self.trend.forward(tape, trend)?;
        let yr = self.remainder.forward(tape, rem)?;
        let y = tape.add(yt, yr)?;
        let index: Arc<[usize]> = node_major_to_window_major(b, stations, horizon);
        tape.gather(y, index, b, horizon * stations)
    }
}

impl Parameterized for Mlp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.hidden.visit(f);
        self.out.visit(f);
    }
}

impl Parameterized for Gru {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for p in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            f(p);
        }
        self.head.visit(f);
    }
}

impl Parameterized for LstmBaseline {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.cell.visit_params(f);
        self.head.visit(f);
    }
}

impl Parameterized for Dlinear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.trend.visit(f);
        self.remainder.visit(f);
    }
}
