//! Model selection by tag: construction of learned networks from a shared
//! [`ModelSpec`] and a uniform kW-in, kW-out forecasting interface.

use std::fmt::Write as _;

use crate::autodiff::{Matrix, Mode, Param, Parameterized, Tape, Var};
use crate::baselines::{self, Dims, Dlinear, Gru, LstmBaseline, Mlp, BASELINE_HIDDEN, DLINEAR_KERNEL};
use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::model::{output_control, Mstem, MstemConfig};
use crate::network::{ModelTag, Network};

/// Everything needed to rebuild a forecaster's architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub tag: ModelTag,
    pub stations: usize,
    /// Window sizes, seed and clamp threshold apply to every model; the
    /// remaining fields only to the full model.
    pub mstem: MstemConfig,
    pub baseline_hidden: usize,
    pub dlinear_kernel: usize,
    /// Moving-average window; `None` means the whole lookback.
    pub ma_window: Option<usize>,
}

impl ModelSpec {
    pub fn new(tag: ModelTag, stations: usize, mstem: MstemConfig) -> Self {
        Self {
            tag,
            stations,
            mstem,
            baseline_hidden: BASELINE_HIDDEN,
            dlinear_kernel: DLINEAR_KERNEL,
            ma_window: None,
        }
    }

    pub fn lookback(&self) -> usize {
        self.mstem.lookback
    }

    pub fn horizon(&self) -> usize {
        self.mstem.horizon
    }

    fn dims(&self) -> Dims {
        Dims {
            lookback: self.lookback(),
            horizon: self.horizon(),
            stations: self.stations,
        }
    }

    /// Line-oriented `key=value` text used in checkpoint headers.
    pub fn to_block(&self) -> String {
        let c = &self.mstem;
        let opt = |v: Option<usize>| v.map_or("none".to_string(), |x| x.to_string());
        let scales: Vec<String> = c.scales.iter().map(usize::to_string).collect();
        let mut s = String::new();
        let _ = writeln!(s, "tag={}", self.tag.key());
        let _ = writeln!(s, "stations={}", self.stations);
        let _ = writeln!(s, "lookback={}", c.lookback);
        let _ = writeln!(s, "horizon={}", c.horizon);
        let _ = writeln!(s, "scales={}", scales.join(","));
        let _ = writeln!(s, "hidden={}", c.hidden);
        let _ = writeln!(s, "graph_out={}", c.graph_out);
        let _ = writeln!(s, "lstm_hidden={}", c.lstm_hidden);
        let _ = writeln!(s, "dropout={:?}", c.dropout);
        let _ = writeln!(s, "threshold={:?}", c.threshold);
        let _ = writeln!(s, "history={}", opt(c.history));
        let _ = writeln!(s, "seed={}", c.seed);
        let _ = writeln!(s, "baseline_hidden={}", self.baseline_hidden);
        let _ = writeln!(s, "dlinear_kernel={}", self.dlinear_kernel);
        let _ = writeln!(s, "ma_window={}", opt(self.ma_window));
        s
    }

    pub fn from_block(block: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for line in block.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad header line '{line}'")))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("header lacks '{k}'")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Checkpoint(format!("header field {k}='{v}' is not a number")))
        }
        let opt = |k: &str| -> Result<Option<usize>> {
            match get(k)? {
                "none" => Ok(None),
                v => num(k, v).map(Some),
            }
        };
        let scales = get("scales")?
            .split(',')
            .map(|v| num("scales", v))
            .collect::<Result<Vec<usize>>>()?;
        let mstem = MstemConfig {
            lookback: num("lookback", get("lookback")?)?,
            horizon: num("horizon", get("horizon")?)?,
            scales,
            hidden: num("hidden", get("hidden")?)?,
            graph_out: num("graph_out", get("graph_out")?)?,
            lstm_hidden: num("lstm_hidden", get("lstm_hidden")?)?,
            dropout: num("dropout", get("dropout")?)?,
            threshold: num("threshold", get("threshold")?)?,
            history: opt("history")?,
            seed: num("seed", get("seed")?)?,
        };
        Ok(Self {
            tag: get("tag")?.parse().map_err(|e: Error| Error::Checkpoint(e.to_string()))?,
            stations: num("stations", get("stations")?)?,
            mstem,
            baseline_hidden: num("baseline_hidden", get("baseline_hidden")?)?,
            dlinear_kernel: num("dlinear_kernel", get("dlinear_kernel")?)?,
            ma_window: opt("ma_window")?,
        })
    }
}

/// A trainable forecaster of any learned kind.
#[derive(Debug, Clone)]
pub enum LearnedModel {
    Mstem(Mstem),
    Mlp(Mlp),
    Gru(Gru),
    Lstm(LstmBaseline),
    Dlinear(Dlinear),
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            LearnedModel::Mstem($m) => $body,
            LearnedModel::Mlp($m) => $body,
            LearnedModel::Gru($m) => $body,
            LearnedModel::Lstm($m) => $body,
            LearnedModel::Dlinear($m) => $body,
        }
    };
}

impl LearnedModel {
    /// Freshly initialized network for `spec`, seeded by `spec.mstem.seed`.
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        let seed = spec.mstem.seed;
        let h = spec.baseline_hidden;
        Ok(match spec.tag {
            ModelTag::Mstem => LearnedModel::Mstem(Mstem::new(spec.mstem.clone(), spec.stations)?),
            ModelTag::Mlp => LearnedModel::Mlp(Mlp::new(spec.dims(), h, seed)?),
            ModelTag::Gru => LearnedModel::Gru(Gru::new(spec.dims(), h, seed)?),
            ModelTag::Lstm => LearnedModel::Lstm(LstmBaseline::new(spec.dims(), h, seed)?),
            ModelTag::Dlinear => LearnedModel::Dlinear(Dlinear::new(spec.dims(), spec.dlinear_kernel, seed)?),
            ModelTag::Ma | ModelTag::Hi => {
                return Err(Error::Contract(format!(
                    "{} is a training-free model; use evaluate instead of train",
                    spec.tag
                )))
            }
        })
    }
}

impl Parameterized for LearnedModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        dispatch!(self, m => m.visit_params(f))
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        dispatch!(self, m => m.visit_buffers(f))
    }
}

impl Network for LearnedModel {
    fn tag(&self) -> ModelTag {
        dispatch!(self, m => m.tag())
    }

    fn lookback(&self) -> usize {
        dispatch!(self, m => m.lookback())
    }

    fn horizon(&self) -> usize {
        dispatch!(self, m => m.horizon())
    }

    fn stations(&self) -> usize {
        dispatch!(self, m => m.stations())
    }

    fn forward(&mut self, tape: &mut Tape, windows: &[&Matrix], mode: Mode) -> Result<Var> {
        dispatch!(self, m => m.forward(tape, windows, mode))
    }
}

/// Any forecaster behind a kW-in, kW-out interface.
#[derive(Debug, Clone)]
pub enum Forecaster {
    /// Moving average or historical inertia, applied directly in kW.
    Rule(ModelSpec),
    /// A network operating on standardized windows.
    Learned {
        spec: ModelSpec,
        model: LearnedModel,
        trained: bool,
    },
}

impl Forecaster {
    pub fn rule(spec: ModelSpec) -> Result<Self> {
        if spec.tag.is_learned() {
            return Err(Error::Contract(format!("{} needs trained parameters", spec.tag)));
        }
        Ok(Forecaster::Rule(spec))
    }

    pub fn trained(spec: ModelSpec, model: LearnedModel) -> Self {
        Forecaster::Learned {
            spec,
            model,
            trained: true,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        match self {
            Forecaster::Rule(spec) | Forecaster::Learned { spec, .. } => spec,
        }
    }

    /// Unclamped `α×N` forecasts in kW for windows given in kW.
    pub fn forecast_raw(&mut self, inputs: &[&Matrix], scaler: &Scaler) -> Result<Vec<Matrix>> {
        match self {
            Forecaster::Rule(spec) => {
                let alpha = spec.horizon();
                inputs
                    .iter()
                    .map(|x| match spec.tag {
                        ModelTag::Ma => {
                            baselines::ma_forecast(x, spec.ma_window.unwrap_or(x.rows()), alpha)
                        }
                        _ => baselines::hi_forecast(x, alpha),
                    })
                    .collect()
            }
            Forecaster::Learned { spec, model, trained } => {
                if !*trained {
                    return Err(Error::Contract(format!("{} has not been trained", spec.tag)));
                }
                let scaled = inputs
                    .iter()
                    .map(|x| scaler.apply(x))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&Matrix> = scaled.iter().collect();
                model
                    .predict(&refs)?
                    .iter()
                    .map(|p| scaler.invert(p))
                    .collect()
            }
        }
    }

    /// Forecasts in kW after the nonnegativity clamp.
    pub fn forecast(&mut self, inputs: &[&Matrix], scaler: &Scaler) -> Result<Vec<Matrix>> {
        let theta = self.spec().mstem.threshold;
        self.forecast_raw(inputs, scaler)?
            .iter()
            .map(|p| output_control(p, theta))
            .collect()
    }
}
