//! Run configuration: a TOML file with flat sections, overridden by flags.

use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mstem::data::{KindFilter, SplitFractions, SynthConfig};
use mstem::evaluation::{MetricUnits, TestSampling};
use mstem::{CompareSpec, EvalOptions, ModelSpec, ModelTag, MstemConfig, TrainConfig};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub data: DataSection,
    pub synth: SynthSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Equipment class kept during ingestion: fast, slow or all.
    pub kind: String,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub stations: usize,
    pub days: usize,
    pub kind: String,
    pub peak_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub tag: String,
    pub lookback: usize,
    pub horizon: usize,
    pub scales: Vec<usize>,
    pub hidden: usize,
    pub graph_out: usize,
    pub lstm_hidden: usize,
    pub dropout: f64,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub history: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ma_window: Option<usize>,
    pub baseline_hidden: usize,
    pub dlinear_kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub huber_delta: f64,
    pub shuffle: bool,
    pub select_best: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_grad: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub models: Vec<String>,
    pub horizons: Vec<usize>,
    /// kw or standardized.
    pub units: String,
    /// windows (every test window) or hours (stride of one horizon).
    pub sampling: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = MstemConfig::default();
        Self {
            seed: m.seed,
            workers: 1,
            data: DataSection::default(),
            synth: SynthSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        let f = SplitFractions::default();
        Self {
            kind: KindFilter::All.to_string(),
            train_fraction: f.train,
            val_fraction: f.val,
        }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            stations: s.stations,
            days: s.days,
            kind: s.kind.to_string(),
            peak_rate: s.peak_rate,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = MstemConfig::default();
        let spec = ModelSpec::new(ModelTag::Mstem, 1, m.clone());
        Self {
            tag: ModelTag::Mstem.key().to_string(),
            lookback: m.lookback,
            horizon: m.horizon,
            scales: m.scales,
            hidden: m.hidden,
            graph_out: m.graph_out,
            lstm_hidden: m.lstm_hidden,
            dropout: m.dropout,
            threshold: m.threshold,
            history: m.history,
            ma_window: None,
            baseline_hidden: spec.baseline_hidden,
            dlinear_kernel: spec.dlinear_kernel,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            huber_delta: t.huber_delta,
            shuffle: t.shuffle,
            select_best: t.select_best,
            clip_grad: t.clip_grad,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            models: ModelTag::ALL.iter().map(|t| t.key().to_string()).collect(),
            horizons: vec![6, 12, 24],
            units: MetricUnits::default().to_string(),
            sampling: TestSampling::default().to_string(),
        }
    }
}

/// Flag overrides; every config key has one.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Equipment class kept during ingestion (fast, slow, all).
    #[arg(long, global = true, value_name = "KIND")]
    pub kind: Option<String>,
    #[arg(long, global = true)]
    pub train_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub val_fraction: Option<f64>,

    #[arg(long, global = true)]
    pub synth_stations: Option<usize>,
    #[arg(long, global = true)]
    pub synth_days: Option<usize>,
    #[arg(long, global = true)]
    pub synth_kind: Option<String>,
    #[arg(long, global = true)]
    pub synth_peak_rate: Option<f64>,

    /// Model tag: ma, hi, mlp, gru, lstm, dlinear or mstem.
    #[arg(long, global = true, value_name = "TAG")]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub lookback: Option<usize>,
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Comma-separated temporal scales.
    #[arg(long, global = true, value_delimiter = ',')]
    pub scales: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    #[arg(long, global = true)]
    pub graph_out: Option<usize>,
    #[arg(long, global = true)]
    pub lstm_hidden: Option<usize>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    /// Output threshold in kW subtracted before clamping at zero.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Rows of input history added to the forecast (defaults to the horizon).
    #[arg(long, global = true)]
    pub history: Option<usize>,
    /// Moving-average window (defaults to the lookback).
    #[arg(long, global = true)]
    pub ma_window: Option<usize>,
    #[arg(long, global = true)]
    pub baseline_hidden: Option<usize>,
    #[arg(long, global = true)]
    pub dlinear_kernel: Option<usize>,

    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub huber_delta: Option<f64>,
    #[arg(long, global = true, value_name = "BOOL")]
    pub shuffle: Option<bool>,
    #[arg(long, global = true, value_name = "BOOL")]
    pub select_best: Option<bool>,
    #[arg(long, global = true)]
    pub clip_grad: Option<f64>,

    /// Comma-separated model tags for compare.
    #[arg(long, global = true, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Comma-separated horizons for compare.
    #[arg(long, global = true, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    /// Metric units: kw or standardized.
    #[arg(long, global = true)]
    pub units: Option<String>,
    /// Test sampling: windows or hours.
    #[arg(long, global = true)]
    pub sampling: Option<String>,
}

macro_rules! apply {
    ($($src:expr => $dst:expr),* $(,)?) => {
        $(if let Some(v) = $src.clone() { $dst = v; })*
    };
}

impl RunConfig {
    /// Reads `path` if given, otherwise starts from defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| UsageError(format!("invalid config file {}: {e}", path.display())).into())
    }

    pub fn apply(&mut self, seed: Option<u64>, workers: Option<usize>, o: &Overrides) {
        apply!(
            seed => self.seed,
            workers => self.workers,
            o.kind => self.data.kind,
            o.train_fraction => self.data.train_fraction,
            o.val_fraction => self.data.val_fraction,
            o.synth_stations => self.synth.stations,
            o.synth_days => self.synth.days,
            o.synth_kind => self.synth.kind,
            o.synth_peak_rate => self.synth.peak_rate,
            o.model => self.model.tag,
            o.lookback => self.model.lookback,
            o.horizon => self.model.horizon,
            o.scales => self.model.scales,
            o.hidden => self.model.hidden,
            o.graph_out => self.model.graph_out,
            o.lstm_hidden => self.model.lstm_hidden,
            o.dropout => self.model.dropout,
            o.threshold => self.model.threshold,
            o.baseline_hidden => self.model.baseline_hidden,
            o.dlinear_kernel => self.model.dlinear_kernel,
            o.learning_rate => self.train.learning_rate,
            o.batch_size => self.train.batch_size,
            o.epochs => self.train.epochs,
            o.huber_delta => self.train.huber_delta,
            o.shuffle => self.train.shuffle,
            o.select_best => self.train.select_best,
            o.models => self.eval.models,
            o.horizons => self.eval.horizons,
            o.units => self.eval.units,
            o.sampling => self.eval.sampling,
        );
        if o.history.is_some() {
            self.model.history = o.history;
        }
        if o.ma_window.is_some() {
            self.model.ma_window = o.ma_window;
        }
        if o.clip_grad.is_some() {
            self.train.clip_grad = o.clip_grad;
        }
    }

    /// The effective configuration as TOML text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// Hex SHA-256 of the effective configuration. The worker count is left
    /// out because it never changes results.
    pub fn digest(&self) -> String {
        let canonical = Self {
            workers: 1,
            ..self.clone()
        };
        hex(&Sha256::digest(canonical.to_toml().as_bytes()))
    }

    pub fn kind(&self) -> Result<KindFilter> {
        usage(self.data.kind.parse())
    }

    pub fn tag(&self) -> Result<ModelTag> {
        usage(self.model.tag.parse())
    }

    pub fn fractions(&self) -> SplitFractions {
        SplitFractions {
            train: self.data.train_fraction,
            val: self.data.val_fraction,
        }
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            stations: self.synth.stations,
            days: self.synth.days,
            seed: self.seed,
            kind: usage(self.synth.kind.parse())?,
            peak_rate: self.synth.peak_rate,
            ..SynthConfig::default()
        })
    }

    pub fn mstem(&self) -> MstemConfig {
        let m = &self.model;
        MstemConfig {
            lookback: m.lookback,
            horizon: m.horizon,
            scales: m.scales.clone(),
            hidden: m.hidden,
            graph_out: m.graph_out,
            lstm_hidden: m.lstm_hidden,
            dropout: m.dropout,
            threshold: m.threshold,
            history: m.history,
            seed: self.seed,
        }
    }

    /// Full model description for `stations` series, validated.
    pub fn model_spec(&self, stations: usize) -> Result<ModelSpec> {
        let tag = self.tag()?;
        let mstem = self.mstem();
        // Graph-branch settings only constrain the full model.
        if tag == ModelTag::Mstem {
            usage(mstem.validate())?;
        } else if mstem.lookback == 0 || mstem.horizon == 0 || mstem.threshold.is_nan() || mstem.threshold < 0.0 {
            return Err(UsageError("lookback and horizon must be ≥ 1 and threshold ≥ 0".into()).into());
        }
        let mut spec = ModelSpec::new(tag, stations, mstem);
        spec.baseline_hidden = self.model.baseline_hidden;
        spec.dlinear_kernel = self.model.dlinear_kernel;
        spec.ma_window = self.model.ma_window;
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            huber_delta: t.huber_delta,
            seed: self.seed,
            shuffle: t.shuffle,
            select_best: t.select_best,
            clip_grad: t.clip_grad,
        };
        usage(cfg.validate())?;
        Ok(cfg)
    }

    pub fn eval_options(&self) -> Result<EvalOptions> {
        Ok(EvalOptions {
            units: usage(self.eval.units.parse())?,
            sampling: usage(self.eval.sampling.parse())?,
        })
    }

    pub fn compare_spec(&self) -> Result<CompareSpec> {
        let models = self
            .eval
            .models
            .iter()
            .map(|m| usage(m.parse::<ModelTag>()))
            .collect::<Result<Vec<_>>>()?;
        Ok(CompareSpec {
            models,
            horizons: self.eval.horizons.clone(),
            model: self.mstem(),
            ma_window: self.model.ma_window,
            train: self.train_config()?,
            fractions: self.fractions(),
            options: self.eval_options()?,
        })
    }
}

/// Lowercase hex encoding.
pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reclassifies a library error from parsing or validating settings as a
/// usage error.
fn usage<T>(r: mstem::Result<T>) -> Result<T> {
    r.map_err(|e| UsageError(e.to_string()).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.digest().len(), 64);
    }

    #[test]
    fn flags_take_precedence_over_file_values() {
        let mut cfg: RunConfig = toml::from_str("seed = 3\n[train]\nepochs = 9\n").unwrap();
        assert_eq!((cfg.seed, cfg.train.epochs), (3, 9));
        let o = Overrides {
            epochs: Some(2),
            scales: Some(vec![1, 2]),
            ..Default::default()
        };
        cfg.apply(Some(5), None, &o);
        assert_eq!((cfg.seed, cfg.train.epochs, cfg.model.scales.clone()), (5, 2, vec![1, 2]));
        assert_eq!(cfg.train_config().unwrap().seed, 5);
    }

    #[test]
    fn digest_tracks_every_setting() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.model.history = Some(3);
        assert_ne!(a.digest(), b.digest());
        let c = RunConfig { workers: 8, ..a.clone() };
        assert_eq!(a.digest(), c.digest());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        assert!(toml::from_str::<RunConfig>("[model]\nbogus = 1\n").is_err());
        let mut cfg = RunConfig::default();
        cfg.model.tag = "arima".into();
        assert!(cfg.tag().unwrap_err().is::<UsageError>());
        cfg.model.tag = "mstem".into();
        cfg.model.scales = vec![];
        assert!(cfg.model_spec(2).unwrap_err().is::<UsageError>());
    }
}
