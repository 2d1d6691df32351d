use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::Duration;
use sha2::{Digest, Sha256};

use mstem::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use mstem::data::{
    format_timestamp, generate_events, ingest_events, prepare_dataset, read_series, resample_hourly,
    station_ids, write_events, write_series, LoadSeries, Scaler,
};
use mstem::evaluation::{evaluate as score, select_test_windows, test_forecasts, write_trace};
use mstem::training::validation_mse;
use mstem::{run_comparison, train as fit, Error, Forecaster, LearnedModel, ModelSpec};

use crate::config::{hex, RunConfig};
use crate::UsageError;

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

/// A file when `path` is given, stdout otherwise.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

/// File name plus a short content hash, so reports name the exact input.
fn dataset_id(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let name = path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
    Ok(format!("{name}@{}", &hex(&Sha256::digest(&bytes))[..12]))
}

fn load_series(path: &Path) -> Result<LoadSeries> {
    read_series(open(path)?).with_context(|| format!("reading series cache {}", path.display()))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(io::BufReader::new(open(path)?))
        .with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let synth = cfg.synth()?;
    let events = generate_events(&synth)?;
    let mut w = create(out)?;
    write_events(&events, &mut w)?;
    w.flush()?;
    println!("events: {}", events.len());
    println!("stations: {}", synth.stations);
    println!("days: {}", synth.days);
    println!("seed: {}", cfg.seed);
    println!("config_digest: {}", cfg.digest());
    Ok(())
}

pub fn prepare(cfg: &RunConfig, events: &Path, out: &Path) -> Result<()> {
    let kind = cfg.kind()?;
    let report = ingest_events(io::BufReader::new(open(events)?), kind)
        .with_context(|| format!("ingesting {}", events.display()))?;
    if report.events.is_empty() {
        return Err(Error::Data(format!(
            "no {kind} charging events in {} ({} rows read, {} filtered out)",
            events.display(),
            report.total_rows,
            report.filtered_out
        ))
        .into());
    }
    let stations = station_ids(&report.events);
    let series = resample_hourly(&report.events, &stations)?;
    let mut w = create(out)?;
    write_series(&series, &mut w)?;
    w.flush()?;
    println!("stations: {}", series.n_stations());
    println!("hours: {}", series.len());
    println!("total_energy_kwh: {:.3}", series.total_energy_kwh());
    println!("rejected: {}", report.rejected.len());
    println!("filtered_out: {}", report.filtered_out);
    println!("config_digest: {}", cfg.digest());
    Ok(())
}

fn default_log_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".log.csv");
    PathBuf::from(s)
}

pub fn train(cfg: &RunConfig, series_path: &Path, out: &Path, log: Option<PathBuf>) -> Result<()> {
    let series = load_series(series_path)?;
    let spec = cfg.model_spec(series.n_stations())?;
    if !spec.tag.is_learned() {
        return Err(UsageError(format!(
            "{} is a training-free model; use `mstem evaluate --model {}` instead of train",
            spec.tag,
            spec.tag.key()
        ))
        .into());
    }
    let tcfg = cfg.train_config()?;
    let data = prepare_dataset(&series, spec.lookback(), spec.horizon(), cfg.fractions())?;
    let model = LearnedModel::build(&spec)?;
    let (model, log_rows) = fit(model, &data.train, &data.val, &tcfg)?;

    let digest = cfg.digest();
    let mut w = create(out)?;
    save_checkpoint(&spec, &model, &data.scaler, &digest, &mut w)?;
    w.flush()?;

    let log_path = log.unwrap_or_else(|| default_log_path(out));
    let mut lw = create(&log_path)?;
    let metadata = [
        ("model", spec.tag.to_string()),
        ("dataset", dataset_id(series_path)?),
        ("seed", cfg.seed.to_string()),
        ("config_digest", digest),
        ("best_epoch", log_rows.best_epoch.to_string()),
    ];
    log_rows.write_csv(&mut lw, &metadata)?;
    lw.flush()?;

    let best = log_rows.best().expect("training runs at least one epoch");
    println!("model: {}", spec.tag);
    println!("epochs: {}", log_rows.epochs.len());
    println!("best_epoch: {}", best.epoch);
    println!("validation_mse: {:.9}", best.val_mse);
    println!("checkpoint: {}", out.display());
    println!("log: {}", log_path.display());
    Ok(())
}

/// The forecaster for a command: from a checkpoint, or a training-free
/// model described by the configuration. Also returns the scaler that maps
/// kW to model units.
fn load_forecaster(cfg: &RunConfig, stations: usize, checkpoint: Option<&Path>) -> Result<(Forecaster, Option<Scaler>, String)> {
    match checkpoint {
        Some(path) => {
            let ckpt = read_checkpoint(path)?;
            if ckpt.spec.stations != stations {
                return Err(Error::Data(format!(
                    "checkpoint expects {} stations, series has {stations}",
                    ckpt.spec.stations
                ))
                .into());
            }
            Ok((Forecaster::trained(ckpt.spec, ckpt.model), Some(ckpt.scaler), ckpt.config_digest))
        }
        None => {
            let spec = cfg.model_spec(stations)?;
            if spec.tag.is_learned() {
                return Err(UsageError(format!(
                    "{} is a learned model; pass --checkpoint from `mstem train`",
                    spec.tag
                ))
                .into());
            }
            Ok((Forecaster::rule(spec)?, None, cfg.digest()))
        }
    }
}

fn metadata(w: &mut dyn Write, dataset: &str, spec: &ModelSpec, cfg: &RunConfig, model_digest: &str) -> Result<()> {
    writeln!(w, "# dataset: {dataset}")?;
    writeln!(w, "# seed: {}", spec.mstem.seed)?;
    writeln!(w, "# config_digest: {}", cfg.digest())?;
    writeln!(w, "# model_config_digest: {model_digest}")?;
    Ok(())
}

pub fn evaluate(
    cfg: &RunConfig,
    series_path: &Path,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
    trace: Option<&Path>,
) -> Result<()> {
    let series = load_series(series_path)?;
    let options = cfg.eval_options()?;
    let (mut forecaster, ckpt_scaler, model_digest) = load_forecaster(cfg, series.n_stations(), checkpoint)?;
    let spec = forecaster.spec().clone();
    let mut data = prepare_dataset(&series, spec.lookback(), spec.horizon(), cfg.fractions())?;

    let mut val_mse = None;
    if let Some(scaler) = ckpt_scaler {
        if scaler == data.scaler {
            if let Forecaster::Learned { model, .. } = &mut forecaster {
                val_mse = Some(validation_mse(model, &data.val)?);
            }
        } else {
            log::warn!("checkpoint scaler differs from this split; validation MSE not reported");
        }
        data.scaler = scaler;
    }
    let metrics = score(&mut forecaster, &data, options)?;

    let mut w = sink(out)?;
    metadata(&mut *w, &dataset_id(series_path)?, &spec, cfg, &model_digest)?;
    writeln!(w, "# units: {}", options.units)?;
    writeln!(w, "# sampling: {}", options.sampling)?;
    if let Some(v) = val_mse {
        writeln!(w, "# validation_mse: {v:.9}")?;
    }
    writeln!(w, "model,horizon,mse,mae,rmse")?;
    writeln!(
        w,
        "{},{},{:.6},{:.6},{:.6}",
        spec.tag,
        spec.horizon(),
        metrics.mse,
        metrics.mae,
        metrics.rmse
    )?;
    w.flush()?;

    if let Some(path) = trace {
        let (preds, targets) = test_forecasts(&mut forecaster, &data, options.sampling)?;
        let origins: Vec<usize> = select_test_windows(&data.test, spec.horizon(), options.sampling)
            .iter()
            .map(|s| s.origin)
            .collect();
        let mut tw = create(path)?;
        write_trace(&mut tw, &data.stations, &origins, &preds, &targets)?;
        tw.flush()?;
    }
    Ok(())
}

pub fn compare(cfg: &RunConfig, series_path: &Path, out: Option<&Path>, table: Option<&Path>) -> Result<()> {
    let series = load_series(series_path)?;
    let spec = cfg.compare_spec()?;
    let report = run_comparison(&series, &spec, &dataset_id(series_path)?, &cfg.digest(), cfg.workers)?;
    let failed = report.rows.iter().filter(|r| r.outcome.is_err()).count();

    let mut w = sink(out)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    if let Some(path) = table {
        let mut tw = create(path)?;
        report.write_table(&mut tw)?;
        tw.flush()?;
    }
    if out.is_some() {
        report.write_table(io::stdout().lock())?;
    }
    if failed > 0 {
        eprintln!("warning: {failed} of {} rows failed", report.rows.len());
    }
    Ok(())
}

pub fn forecast(cfg: &RunConfig, series_path: &Path, checkpoint: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let series = load_series(series_path)?;
    let (mut forecaster, scaler, model_digest) = load_forecaster(cfg, series.n_stations(), checkpoint)?;
    let spec = forecaster.spec().clone();
    let (tau, len) = (spec.lookback(), series.len());
    if len < tau {
        return Err(Error::Config(format!("series has {len} rows, lookback needs {tau}")).into());
    }
    let input = series.values().slice_rows(len - tau, len);
    let scaler = scaler.unwrap_or_else(|| Scaler::identity(series.n_stations()));
    let pred = forecaster.forecast(&[&input], &scaler)?.remove(0);

    let mut w = sink(out)?;
    metadata(&mut *w, &dataset_id(series_path)?, &spec, cfg, &model_digest)?;
    writeln!(w, "# model: {}", spec.tag)?;
    write!(w, "timestamp")?;
    for s in series.stations() {
        write!(w, ",{s}")?;
    }
    writeln!(w)?;
    let first = series.timestamp(len - 1) + Duration::hours(1);
    for step in 0..pred.rows() {
        write!(w, "{}", format_timestamp(&(first + Duration::hours(step as i64))))?;
        for v in pred.row(step) {
            write!(w, ",{v:.6}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
