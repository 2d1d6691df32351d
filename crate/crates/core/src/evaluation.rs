//! Error metrics and the multi-model, multi-horizon comparison report.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::autodiff::Matrix;
use crate::data::{prepare_dataset, LoadSeries, PreparedData, SplitFractions, WindowSample};
use crate::error::{Error, Result};
use crate::forecaster::{Forecaster, LearnedModel, ModelSpec};
use crate::model::MstemConfig;
use crate::network::ModelTag;
use crate::training::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTriple {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// Averages over every cell of every forecast (stations × samples × steps).
pub fn compute_metrics(pred: &[Matrix], actual: &[Matrix]) -> Result<MetricTriple> {
    if pred.is_empty() {
        return Err(Error::Contract("no test forecasts to score".into()));
    }
    if pred.len() != actual.len() {
        return Err(Error::Contract(format!(
            "{} forecasts for {} targets",
            pred.len(),
            actual.len()
        )));
    }
    let (mut sq, mut abs, mut cells) = (0.0, 0.0, 0usize);
    for (p, a) in pred.iter().zip(actual) {
        if p.shape() != a.shape() {
            return Err(Error::dim("forecast vs target", p.shape(), a.shape()));
        }
        for (x, y) in p.data().iter().zip(a.data()) {
            let e = x - y;
            sq += e * e;
            abs += e.abs();
        }
        cells += p.len();
    }
    if cells == 0 {
        return Err(Error::Contract("forecasts have no cells".into()));
    }
    let mse = sq / cells as f64;
    Ok(MetricTriple {
        mse,
        mae: abs / cells as f64,
        rmse: mse.sqrt(),
    })
}

/// Units in which forecasts are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MetricUnits {
    #[default]
    Kw,
    Standardized,
}

/// Which test windows count as samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TestSampling {
    /// Every stride-1 window.
    #[default]
    Windows,
    /// Windows at stride `α`, so each test hour is forecast once.
    Hours,
}

macro_rules! text_enum {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($s => Ok(Self::$v),)+
                    other => Err(Error::Parameter(format!(
                        "unknown {} '{other}' (expected {})",
                        stringify!($t),
                        [$($s),+].join(" or ")
                    ))),
                }
            }
        }
    };
}

text_enum!(MetricUnits, Kw => "kw", Standardized => "standardized");
text_enum!(TestSampling, Windows => "windows", Hours => "hours");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    pub units: MetricUnits,
    pub sampling: TestSampling,
}

/// The test windows scored under `sampling`.
pub fn select_test_windows(test: &[WindowSample], horizon: usize, sampling: TestSampling) -> Vec<&WindowSample> {
    match sampling {
        TestSampling::Windows => test.iter().collect(),
        TestSampling::Hours => test.iter().step_by(horizon.max(1)).collect(),
    }
}

/// Clamped kW forecasts for the selected test windows, paired with targets.
pub fn test_forecasts(
    forecaster: &mut Forecaster,
    data: &PreparedData,
    sampling: TestSampling,
) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
    let windows = select_test_windows(&data.test, forecaster.spec().horizon(), sampling);
    if windows.is_empty() {
        return Err(Error::Config(format!(
            "test segment too short for lookback {} + horizon {}",
            forecaster.spec().lookback(),
            forecaster.spec().horizon()
        )));
    }
    let inputs: Vec<&Matrix> = windows.iter().map(|w| &w.input).collect();
    let preds = forecaster.forecast(&inputs, &data.scaler)?;
    let targets = windows.iter().map(|w| w.target.clone()).collect();
    Ok((preds, targets))
}

/// Scores a forecaster on the test windows of `data`.
pub fn evaluate(forecaster: &mut Forecaster, data: &PreparedData, options: EvalOptions) -> Result<MetricTriple> {
    let (preds, targets) = test_forecasts(forecaster, data, options.sampling)?;
    match options.units {
        MetricUnits::Kw => compute_metrics(&preds, &targets),
        MetricUnits::Standardized => {
            let s = &data.scaler;
            let p = preds.iter().map(|m| s.apply(m)).collect::<Result<Vec<_>>>()?;
            let t = targets.iter().map(|m| s.apply(m)).collect::<Result<Vec<_>>>()?;
            compute_metrics(&p, &t)
        }
    }
}

/// Per-station trace rows `origin,step,station,actual,predicted` for plotting.
pub fn write_trace<W: Write>(
    mut w: W,
    stations: &[String],
    origins: &[usize],
    preds: &[Matrix],
    targets: &[Matrix],
) -> Result<()> {
    writeln!(w, "origin,step,station,actual,predicted")?;
    for ((origin, p), t) in origins.iter().zip(preds).zip(targets) {
        for step in 0..p.rows() {
            for (s, name) in stations.iter().enumerate() {
                writeln!(w, "{origin},{},{name},{:.6},{:.6}", step + 1, t.get(step, s), p.get(step, s))?;
            }
        }
    }
    Ok(())
}

/// Everything a comparison run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareSpec {
    pub models: Vec<ModelTag>,
    pub horizons: Vec<usize>,
    /// Architecture template; its horizon is replaced per row.
    pub model: MstemConfig,
    pub ma_window: Option<usize>,
    pub train: TrainConfig,
    pub fractions: SplitFractions,
    pub options: EvalOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: ModelTag,
    pub horizon: usize,
    /// Metrics, or the error message if this row failed.
    pub outcome: std::result::Result<MetricTriple, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastReport {
    pub dataset_id: String,
    pub seed: u64,
    pub config_digest: String,
    pub rows: Vec<ReportRow>,
}

/// Trains (when needed) and scores one forecaster at one horizon.
pub fn run_job(series: &LoadSeries, data: &PreparedData, spec: &CompareSpec, tag: ModelTag, horizon: usize) -> Result<MetricTriple> {
    let config = MstemConfig {
        horizon,
        history: spec.model.history.map(|h| h.min(horizon)),
        ..spec.model.clone()
    };
    let mut mspec = ModelSpec::new(tag, series.n_stations(), config);
    mspec.ma_window = spec.ma_window;
    let mut forecaster = if tag.is_learned() {
        let model = LearnedModel::build(&mspec)?;
        let (trained, _) = train(model, &data.train, &data.val, &spec.train)?;
        Forecaster::trained(mspec, trained)
    } else {
        Forecaster::rule(mspec)?
    };
    evaluate(&mut forecaster, data, spec.options)
}

/// Runs every `(horizon, model)` pair on up to `workers` threads. Rows are
/// ordered by horizon, then by model in the given order; failures are
/// recorded per row.
pub fn run_comparison(
    series: &LoadSeries,
    spec: &CompareSpec,
    dataset_id: &str,
    config_digest: &str,
    workers: usize,
) -> Result<ForecastReport> {
    if spec.models.is_empty() || spec.horizons.is_empty() {
        return Err(Error::Parameter("comparison needs at least one model and one horizon".into()));
    }
    let mut prepared = Vec::with_capacity(spec.horizons.len());
    for &h in &spec.horizons {
        prepared.push(prepare_dataset(series, spec.model.lookback, h, spec.fractions));
    }
    let jobs: Vec<(usize, ModelTag)> = (0..spec.horizons.len())
        .flat_map(|hi| spec.models.iter().map(move |&m| (hi, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let rows = pool.install(|| {
        jobs.par_iter()
            .map(|&(hi, tag)| {
                let horizon = spec.horizons[hi];
                let outcome = match &prepared[hi] {
                    Ok(data) => run_job(series, data, spec, tag, horizon),
                    Err(e) => Err(Error::Config(e.to_string())),
                };
                if let Err(e) = &outcome {
                    log::warn!("{tag} at horizon {horizon} failed: {e}");
                }
                ReportRow {
                    model: tag,
                    horizon,
                    outcome: outcome.map_err(|e| e.to_string()),
                }
            })
            .collect()
    });
    Ok(ForecastReport {
        dataset_id: dataset_id.to_string(),
        seed: spec.train.seed,
        config_digest: config_digest.to_string(),
        rows,
    })
}

impl ForecastReport {
    fn metadata<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# dataset: {}", self.dataset_id)?;
        writeln!(w, "# seed: {}", self.seed)?;
        writeln!(w, "# config_digest: {}", self.config_digest)?;
        Ok(())
    }

    /// Delimited rows `model,horizon,mse,mae,rmse,status` after `#` metadata.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        self.metadata(&mut w)?;
        writeln!(w, "model,horizon,mse,mae,rmse,status")?;
        for r in &self.rows {
            match &r.outcome {
                Ok(m) => writeln!(w, "{},{},{:.6},{:.6},{:.6},ok", r.model, r.horizon, m.mse, m.mae, m.rmse)?,
                Err(e) => writeln!(w, "{},{},,,,\"failed: {}\"", r.model, r.horizon, e.replace('"', "'"))?,
            }
        }
        Ok(())
    }

    /// Aligned table with one column per model and three metric rows per
    /// horizon; the best value in each metric row is marked with `*`.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        self.metadata(&mut w)?;
        let mut models: Vec<ModelTag> = Vec::new();
        let mut horizons: Vec<usize> = Vec::new();
        for r in &self.rows {
            if !models.contains(&r.model) {
                models.push(r.model);
            }
            if !horizons.contains(&r.horizon) {
                horizons.push(r.horizon);
            }
        }
        let width = 12;
        write!(w, "{:<6}{:<8}", "Step", "Metric")?;
        for m in &models {
            write!(w, "{:>width$}", m.to_string())?;
        }
        writeln!(w)?;
        for &h in &horizons {
            for (name, pick) in [
                ("MSE", (|m: &MetricTriple| m.mse) as fn(&MetricTriple) -> f64),
                ("MAE", |m| m.mae),
                ("RMSE", |m| m.rmse),
            ] {
                let cells: Vec<Option<f64>> = models
                    .iter()
                    .map(|&m| {
                        self.rows
                            .iter()
                            .find(|r| r.model == m && r.horizon == h)
                            .and_then(|r| r.outcome.as_ref().ok().map(pick))
                    })
                    .collect();
                let best = cells.iter().flatten().copied().fold(f64::INFINITY, f64::min);
                let step = if name == "MSE" { format!("{h}h") } else { String::new() };
                write!(w, "{step:<6}{name:<8}")?;
                for c in cells {
                    let text = match c {
                        Some(v) if v == best => format!("{v:.4}*"),
                        Some(v) => format!("{v:.4}"),
                        None => "failed".to_string(),
                    };
                    write!(w, "{text:>width$}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}
