use super::scaler::Scaler;
use super::series::{make_windows, split_series, LoadSeries, SplitFractions, WindowSample};
use crate::error::{Error, Result};

/// Windows cut from each split, ready for training and evaluation.
///
/// Training and validation windows are standardized with a scaler fit on
/// the training segment; test windows stay in kW.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub stations: Vec<String>,
    pub scaler: Scaler,
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

pub fn prepare_dataset(
    series: &LoadSeries,
    lookback: usize,
    horizon: usize,
    fractions: SplitFractions,
) -> Result<PreparedData> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::Parameter("lookback and horizon must be ≥ 1".into()));
    }
    let splits = split_series(series, fractions, lookback + horizon)?;
    let scaler = Scaler::fit(splits.train.values())?;
    let train = make_windows(&scaler.apply(splits.train.values())?, lookback, horizon);
    let val = make_windows(&scaler.apply(splits.val.values())?, lookback, horizon);
    let test = make_windows(splits.test.values(), lookback, horizon);
    Ok(PreparedData {
        stations: series.stations().to_vec(),
        scaler,
        train,
        val,
        test,
    })
}
