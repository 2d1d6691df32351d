//! Temporal branch: a single-layer LSTM over the raw window and a residual
//! path that mixes a learned temporal map with the most recent history.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Matrix, Param, Parameterized, Tape, Var};
use crate::error::{Error, Result, Shape};
use crate::network::node_major;

const GATES: [&str; 4] = ["forget", "input", "candidate", "output"];

/// Weights of the four LSTM gates, each acting on the concatenation
/// `[h_{t−1}, x_t]`.
#[derive(Debug, Clone)]
pub struct LstmParams {
    /// Forget, input, candidate, output; each `(d_h + N) × d_h`.
    pub weights: [Param; 4],
    /// Matching biases, each `1 × d_h`.
    pub biases: [Param; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

impl LstmParams {
    /// Glorot-uniform weights, forget bias 1, other biases 0.
    pub fn new(prefix: &str, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let weights = GATES.map(|g| Param::glorot(format!("{prefix}.w_{g}"), hidden + inputs, hidden, rng));
        let biases = GATES.map(|g| {
            let fill = if g == "forget" { 1.0 } else { 0.0 };
            Param::new(format!("{prefix}.b_{g}"), Matrix::filled(1, hidden, fill))
        });
        Self { weights, biases }
    }

    pub fn hidden(&self) -> usize {
        self.weights[0].value().cols()
    }

    pub fn inputs(&self) -> usize {
        self.weights[0].value().rows() - self.hidden()
    }

    fn check_inputs(&self, inputs: usize) -> Result<()> {
        let hidden = self.hidden();
        for (k, gate) in GATES.iter().enumerate() {
            let w = self.weights[k].value();
            if w.shape() != Shape(hidden + inputs, hidden) {
                return Err(Error::dim(
                    format!("lstm {gate} gate weights"),
                    w.shape(),
                    Shape(hidden + inputs, hidden),
                ));
            }
            let b = self.biases[k].value();
            if b.shape() != Shape(1, hidden) {
                return Err(Error::dim(format!("lstm {gate} gate bias"), b.shape(), Shape(1, hidden)));
            }
        }
        Ok(())
    }

    /// One batched step: `x` is `B×N`, `h` and `c` are `B×d_h`.
    pub fn step(&mut self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        self.check_inputs(tape.value(x).cols())?;
        let z = tape.concat_cols(h, x)?;
        let mut pre = Vec::with_capacity(4);
        for k in 0..4 {
            let w = tape.param(&mut self.weights[k]);
            let b = tape.param(&mut self.biases[k]);
            let zw = tape.matmul(z, w)?;
            pre.push(tape.add_row_bias(zw, b)?);
        }
        let f = tape.sigmoid(pre[0]);
        let i = tape.sigmoid(pre[1]);
        let cand = tape.tanh(pre[2]);
        let o = tape.sigmoid(pre[3]);
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, cand)?;
        let c_next = tape.add(keep, write)?;
        let squashed = tape.tanh(c_next);
        let h_next = tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Final hidden state after folding over a batch of `τ×N` windows from
    /// a zero state; returns `B×d_h`.
    pub fn forward(&mut self, tape: &mut Tape, windows: &[&Matrix]) -> Result<Var> {
        let first = windows
            .first()
            .ok_or_else(|| Error::Contract("lstm received an empty batch".into()))?;
        let Shape(tau, n) = first.shape();
        if tau == 0 {
            return Err(Error::Contract("lstm received an empty window".into()));
        }
        for w in windows {
            if w.shape() != first.shape() {
                return Err(Error::dim("lstm batch windows", first.shape(), w.shape()));
            }
        }
        let b = windows.len();
        let hidden = self.hidden();
        let mut h = tape.constant(Matrix::zeros(b, hidden));
        let mut c = tape.constant(Matrix::zeros(b, hidden));
        for t in 0..tau {
            let mut xt = Matrix::zeros(b, n);
            for (r, w) in windows.iter().enumerate() {
                xt.row_mut(r).copy_from_slice(w.row(t));
            }
            let x = tape.constant(xt);
            (h, c) = self.step(tape, x, h, c)?;
        }
        Ok(h)
    }
}

impl Parameterized for LstmParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for p in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            f(p);
        }
    }
}

/// Single unbatched cell step on plain vectors.
pub fn lstm_cell_step(x: &[f64], state: &LstmState, params: &mut LstmParams) -> Result<LstmState> {
    let hidden = params.hidden();
    if state.h.len() != hidden || state.c.len() != hidden {
        return Err(Error::dim(
            "lstm state",
            Shape(1, state.h.len().max(state.c.len())),
            Shape(1, hidden),
        ));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(Matrix::row_vector(x));
    let hv = tape.constant(Matrix::row_vector(&state.h));
    let cv = tape.constant(Matrix::row_vector(&state.c));
    let (h, c) = params.step(&mut tape, xv, hv, cv)?;
    Ok(LstmState {
        h: tape.value(h).data().to_vec(),
        c: tape.value(c).data().to_vec(),
    })
}

/// Final hidden state for one `τ×N` window.
pub fn lstm_forward(x: &Matrix, params: &mut LstmParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let h = params.forward(&mut tape, &[x])?;
    Ok(tape.value(h).data().to_vec())
}

/// Residual path: learned `τ→α` map per station plus the last `η` rows of
/// the window, zero-padded at the top to `α` rows.
#[derive(Debug, Clone)]
pub struct ResidualParams {
    /// `τ × α`
    pub w_lo: Param,
    pub eta: usize,
}

impl ResidualParams {
    pub fn new(lookback: usize, horizon: usize, eta: usize, rng: &mut impl Rng) -> Result<Self> {
        let params = Self {
            w_lo: Param::glorot("residual.w_lo", lookback, horizon, rng),
            eta,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn lookback(&self) -> usize {
        self.w_lo.value().rows()
    }

    pub fn horizon(&self) -> usize {
        self.w_lo.value().cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (tau, alpha) = (self.lookback(), self.horizon());
        if self.eta > tau {
            return Err(Error::Parameter(format!(
                "residual history length {} exceeds lookback {tau}",
                self.eta
            )));
        }
        if self.eta > alpha {
            return Err(Error::Parameter(format!(
                "residual history length {} exceeds horizon {alpha}",
                self.eta
            )));
        }
        Ok(())
    }

    /// `B × (α·N)` output, window-major with element `(a, n)` at `a·N + n`.
    pub fn forward(&mut self, tape: &mut Tape, windows: &[&Matrix]) -> Result<Var> {
        self.validate()?;
        let first = windows
            .first()
            .ok_or_else(|| Error::Contract("residual path received an empty batch".into()))?;
        let (tau, alpha, n) = (self.lookback(), self.horizon(), first.cols());
        if first.rows() != tau {
            return Err(Error::dim("residual path window", first.shape(), Shape(tau, n)));
        }
        let b = windows.len();
        let mut history = Matrix::zeros(b, alpha * n);
        for (bi, w) in windows.iter().enumerate() {
            if w.shape() != first.shape() {
                return Err(Error::dim("residual path batch", first.shape(), w.shape()));
            }
            let pad = alpha - self.eta;
            for k in 0..self.eta {
                let src = w.row(tau - self.eta + k);
                let dst = &mut history.row_mut(bi)[(pad + k) * n..(pad + k + 1) * n];
                dst.copy_from_slice(src);
            }
        }
        let xs = tape.constant(node_major(windows));
        let w_lo = tape.param(&mut self.w_lo);
        let mapped = tape.matmul(xs, w_lo)?;
        let linear = tape.gather(mapped, node_major_to_window_major(b, n, alpha), b, alpha * n)?;
        let hist = tape.constant(history);
        tape.add(linear, hist)
    }
}

impl Parameterized for ResidualParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w_lo);
    }
}

/// Index map from a `(B·N) × α` node-major matrix to `B × (α·N)`.
pub fn node_major_to_window_major(batch: usize, stations: usize, horizon: usize) -> Arc<[usize]> {
    let mut idx = Vec::with_capacity(batch * stations * horizon);
    for b in 0..batch {
        for a in 0..horizon {
            for n in 0..stations {
                idx.push((b * stations + n) * horizon + a);
            }
        }
    }
    idx.into()
}

/// Residual output `α×N` for one window.
pub fn residual_fusion(x: &Matrix, params: &mut ResidualParams) -> Result<Matrix> {
    let mut tape = Tape::new();
    let out = params.forward(&mut tape, &[x])?;
    Matrix::from_vec(params.horizon(), x.cols(), tape.value(out).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_model;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    /// Direct per-component evaluation of the gate equations.
    fn reference_step(x: &[f64], s: &LstmState, p: &LstmParams) -> LstmState {
        let hidden = s.h.len();
        let z: Vec<f64> = s.h.iter().chain(x).copied().collect();
        let gate = |k: usize, j: usize| {
            let w = p.weights[k].value();
            let mut acc = p.biases[k].value().get(0, j);
            for (r, zr) in z.iter().enumerate() {
                acc += zr * w.get(r, j);
            }
            acc
        };
        let mut out = LstmState::zeros(hidden);
        for j in 0..hidden {
            let f = sigmoid(gate(0, j));
            let i = sigmoid(gate(1, j));
            let cand = gate(2, j).tanh();
            let o = sigmoid(gate(3, j));
            out.c[j] = f * s.c[j] + i * cand;
            out.h[j] = o * out.c[j].tanh();
        }
        out
    }

    fn zeroed(mut p: LstmParams) -> LstmParams {
        p.visit_params(&mut |q| q.value_mut().fill(0.0));
        p
    }

    fn params(n: usize, hidden: usize, seed: u64) -> LstmParams {
        LstmParams::new("lstm", n, hidden, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_network_zero_state() {
        let mut p = zeroed(params(3, 4, 1));
        let s = lstm_cell_step(&[1.0, -2.0, 0.5], &LstmState::zeros(4), &mut p).unwrap();
        assert_eq!(s, LstmState::zeros(4));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = zeroed(params(2, 3, 2));
        p.biases[0].value_mut().fill(40.0);
        let state = LstmState {
            h: vec![0.0; 3],
            c: vec![1.0; 3],
        };
        let s = lstm_cell_step(&[0.3, 0.7], &state, &mut p).unwrap();
        for c in s.c {
            assert!((c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_reference_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = params(3, 5, 3);
        p.visit_params(&mut |q| {
            q.value_mut().data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5))
        });
        let state = LstmState {
            h: (0..5).map(|_| rng.random_range(-0.9..0.9)).collect(),
            c: (0..5).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let x = [0.4, -1.1, 0.25];
        let got = lstm_cell_step(&x, &state, &mut p).unwrap();
        let want = reference_step(&x, &state, &p);
        for (a, b) in got.h.iter().zip(&want.h).chain(got.c.iter().zip(&want.c)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn input_width_mismatch_names_a_gate() {
        let mut p = params(3, 4, 4);
        let err = lstm_cell_step(&[1.0, 2.0], &LstmState::zeros(4), &mut p).unwrap_err();
        assert!(err.to_string().contains("gate"), "{err}");
    }

    #[test]
    fn forward_is_a_fold_of_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = params(2, 4, 5);
        for tau in 1..=4 {
            let x = Matrix::from_vec(tau, 2, (0..2 * tau).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
            let mut s = LstmState::zeros(4);
            for t in 0..tau {
                s = reference_step(x.row(t), &s, &p);
            }
            let h = lstm_forward(&x, &mut p).unwrap();
            for (a, b) in h.iter().zip(&s.h) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_edge_cases() {
        let mut p = zeroed(params(2, 3, 6));
        let x = Matrix::from_rows(&[[5.0, -3.0], [2.0, 9.0]]);
        assert_eq!(lstm_forward(&x, &mut p).unwrap(), vec![0.0; 3]);
        assert!(matches!(lstm_forward(&Matrix::zeros(0, 2), &mut p), Err(Error::Contract(_))));
    }

    #[test]
    fn forget_weight_gradient_through_unrolled_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Matrix::from_vec(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut p = params(3, 4, 7);
        let reports = check_model(&mut p, 0, |p, t| {
            let h = p.forward(t, &[&x])?;
            Ok(t.sum(h))
        })
        .unwrap();
        for r in &reports {
            assert!(r.rel_error < 1e-4, "{}: {}", r.name, r.rel_error);
        }
    }

    #[test]
    fn hidden_state_is_bounded_over_long_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Matrix::from_vec(500, 2, (0..1000).map(|_| rng.random_range(-50.0..50.0)).collect())
            .unwrap();
        let h = lstm_forward(&x, &mut params(2, 6, 8)).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1.0));
    }

    fn residual(tau: usize, alpha: usize, eta: usize) -> ResidualParams {
        ResidualParams::new(tau, alpha, eta, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn zero_map_passes_history_through() {
        let mut r = residual(5, 3, 3);
        r.w_lo.value_mut().fill(0.0);
        let x = Matrix::from_vec(5, 2, (0..10).map(f64::from).collect()).unwrap();
        assert_eq!(residual_fusion(&x, &mut r).unwrap(), x.slice_rows(2, 5));
    }

    #[test]
    fn short_history_is_padded_at_the_top() {
        let mut r = residual(5, 3, 1);
        r.w_lo.value_mut().fill(0.0);
        let x = Matrix::from_vec(5, 2, (0..10).map(f64::from).collect()).unwrap();
        let out = residual_fusion(&x, &mut r).unwrap();
        assert_eq!(out, Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [8.0, 9.0]]));
    }

    #[test]
    fn selector_map_by_hand() {
        let mut r = residual(3, 2, 2);
        *r.w_lo.value_mut() = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
        let x = Matrix::from_rows(&[[1.0, 10.0], [2.0, 20.0], [4.0, 40.0]]);
        let out = residual_fusion(&x, &mut r).unwrap();
        // [r1 + r0, r2 + r1]
        assert_eq!(out, Matrix::from_rows(&[[3.0, 30.0], [6.0, 60.0]]));
    }

    #[test]
    fn zero_input_and_bad_history_length() {
        let mut r = residual(4, 2, 2);
        assert!(residual_fusion(&Matrix::zeros(4, 3), &mut r)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(ResidualParams::new(3, 6, 4, &mut rng), Err(Error::Parameter(_))));
        assert!(matches!(ResidualParams::new(8, 2, 3, &mut rng), Err(Error::Parameter(_))));
    }

    proptest! {
        #[test]
        fn residual_is_linear(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            x1 in prop::collection::vec(-5.0f64..5.0, 12),
            x2 in prop::collection::vec(-5.0f64..5.0, 12),
        ) {
            let mut r = residual(6, 2, 2);
            let m1 = Matrix::from_vec(6, 2, x1).unwrap();
            let m2 = Matrix::from_vec(6, 2, x2).unwrap();
            let mix = m1.zip_map(&m2, |p, q| a * p + b * q);
            let lhs = residual_fusion(&mix, &mut r).unwrap();
            let f1 = residual_fusion(&m1, &mut r).unwrap();
            let f2 = residual_fusion(&m2, &mut r).unwrap();
            let rhs = f1.zip_map(&f2, |p, q| a * p + b * q);
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        }
    }
}
