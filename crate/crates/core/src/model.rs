//! The full forecaster: graph branch, recurrent branch and residual path
//! combined at the output layer, plus the nonnegativity clamp.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, Mode, Param, Parameterized, Tape, Var};
use crate::error::{Error, Result};
use crate::mgcl::Mgcl;
use crate::network::{check_batch, ModelTag, Network};
use crate::tenn::{node_major_to_window_major, LstmParams, ResidualParams};

/// Architecture and regularization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MstemConfig {
    /// Lookback window in hours.
    pub lookback: usize,
    /// Forecast horizon in hours.
    pub horizon: usize,
    /// Temporal strides of the graph branch.
    pub scales: Vec<usize>,
    /// Graph-convolution hidden width.
    pub hidden: usize,
    /// Graph-branch output width per node.
    pub graph_out: usize,
    /// LSTM hidden width.
    pub lstm_hidden: usize,
    pub dropout: f64,
    /// Predictions below this many kW are clamped to zero.
    pub threshold: f64,
    /// Rows of raw history added to the output; `None` means `horizon`.
    pub history: Option<usize>,
    pub seed: u64,
}

impl Default for MstemConfig {
    fn default() -> Self {
        Self {
            lookback: 24,
            horizon: 6,
            scales: vec![1, 5],
            hidden: 16,
            graph_out: 4,
            lstm_hidden: 16,
            dropout: 0.1,
            threshold: 0.0,
            history: None,
            seed: 42,
        }
    }
}

impl MstemConfig {
    pub fn history_len(&self) -> usize {
        self.history.unwrap_or(self.horizon)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.lookback == 0 || self.horizon == 0 {
            return bad("lookback and horizon must be ≥ 1".into());
        }
        if self.scales.is_empty() {
            return bad("scale set is empty".into());
        }
        if let Some(s) = self.scales.iter().find(|&&s| s < 1 || s > self.lookback) {
            return bad(format!("scale {s} outside [1, {}]", self.lookback));
        }
        let mut sorted = self.scales.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.scales.len() {
            return bad("scales must be distinct".into());
        }
        if self.hidden == 0 || self.graph_out == 0 || self.lstm_hidden == 0 {
            return bad("layer widths must be ≥ 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.threshold >= 0.0) || !self.threshold.is_finite() {
            return bad(format!("threshold {} must be a finite value ≥ 0", self.threshold));
        }
        let eta = self.history_len();
        if eta > self.lookback || eta > self.horizon {
            return bad(format!(
                "history length {eta} must not exceed lookback {} or horizon {}",
                self.lookback, self.horizon
            ));
        }
        Ok(())
    }
}

/// `max(P − θ, 0)` elementwise.
pub fn output_control(p: &Matrix, threshold: f64) -> Result<Matrix> {
    if !(threshold >= 0.0) {
        return Err(Error::Parameter(format!("threshold {threshold} must be ≥ 0")));
    }
    Ok(p.map(|v| (v - threshold).max(0.0)))
}

#[derive(Debug, Clone)]
pub struct Mstem {
    config: MstemConfig,
    stations: usize,
    pub mgcl: Mgcl,
    pub lstm: LstmParams,
    pub residual: ResidualParams,
    /// `g × α`, applied per node.
    pub w_out_graph: Param,
    /// `d_h × (α·N)`.
    pub w_out_temporal: Param,
}

impl Mstem {
    /// Glorot-initialized model, reproducible from `config.seed`.
    pub fn new(config: MstemConfig, stations: usize) -> Result<Self> {
        config.validate()?;
        if stations == 0 {
            return Err(Error::Parameter("model needs at least one station".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = &config;
        let mgcl = Mgcl::new(c.lookback, stations, &c.scales, c.hidden, c.graph_out, c.dropout, &mut rng)?;
        let lstm = LstmParams::new("lstm", stations, c.lstm_hidden, &mut rng);
        let residual = ResidualParams::new(c.lookback, c.horizon, c.history_len(), &mut rng)?;
        let w_out_graph = Param::glorot("out.graph", c.graph_out, c.horizon, &mut rng);
        let w_out_temporal = Param::glorot("out.temporal", c.lstm_hidden, c.horizon * stations, &mut rng);
        Ok(Self {
            config,
            stations,
            mgcl,
            lstm,
            residual,
            w_out_graph,
            w_out_temporal,
        })
    }

    pub fn config(&self) -> &MstemConfig {
        &self.config
    }

    /// Standardized `α×N` forecast for one window.
    pub fn forward_window(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        let mut tape = Tape::with_seed(self.config.seed);
        let y = self.forward(&mut tape, &[x], mode)?;
        Matrix::from_vec(self.config.horizon, self.stations, tape.value(y).data().to_vec())
    }
}

impl Network for Mstem {
    fn tag(&self) -> ModelTag {
        ModelTag::Mstem
    }

    fn lookback(&self) -> usize {
        self.config.lookback
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn stations(&self) -> usize {
        self.stations
    }

    fn forward(&mut self, tape: &mut Tape, windows: &[&Matrix], mode: Mode) -> Result<Var> {
        let (alpha, n) = (self.config.horizon, self.stations);
        check_batch(windows, self.config.lookback, n, "mstem")?;
        let b = windows.len();

        let g = self
            .mgcl
            .forward(tape, windows, mode)
            .map_err(|e| e.in_branch("graph branch"))?;
        let w1 = tape.param(&mut self.w_out_graph);
        let per_node = tape.matmul(g, w1).map_err(|e| e.in_branch("graph output map"))?;
        let graph_term = tape.gather(per_node, node_major_to_window_major(b, n, alpha), b, alpha * n)?;

        let h = self
            .lstm
            .forward(tape, windows)
            .map_err(|e| e.in_branch("temporal branch"))?;
        let w2 = tape.param(&mut self.w_out_temporal);
        let temporal_term = tape.matmul(h, w2).map_err(|e| e.in_branch("temporal output map"))?;

        let residual_term = self
            .residual
            .forward(tape, windows)
            .map_err(|e| e.in_branch("residual path"))?;

        let partial = tape.add(graph_term, temporal_term)?;
        tape.add(partial, residual_term)
    }
}

impl Parameterized for Mstem {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.mgcl.visit_params(f);
        self.lstm.visit_params(f);
        self.residual.visit_params(f);
        f(&mut self.w_out_graph);
        f(&mut self.w_out_temporal);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.mgcl.visit_buffers(f);
    }
}
