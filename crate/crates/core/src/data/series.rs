use std::io::{Read, Write};

use chrono::{DateTime, Duration, DurationRound, Utc};

use super::events::{format_timestamp, parse_timestamp, ChargingEvent};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Hourly per-station load in kW; row `i` is the hour starting at `start + i h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSeries {
    stations: Vec<String>,
    start: DateTime<Utc>,
    values: Matrix,
}

impl LoadSeries {
    pub fn new(stations: Vec<String>, start: DateTime<Utc>, values: Matrix) -> Result<Self> {
        if values.cols() != stations.len() {
            return Err(Error::Data(format!(
                "{} stations but {} value columns",
                stations.len(),
                values.cols()
            )));
        }
        if let Some(v) = values.data().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Data(format!("load values must be finite and ≥ 0, got {v}")));
        }
        Ok(Self {
            stations,
            start,
            values,
        })
    }

    pub fn stations(&self) -> &[String] {
        &self.stations
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Number of hourly rows.
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn timestamp(&self, row: usize) -> DateTime<Utc> {
        self.start + Duration::hours(row as i64)
    }

    /// Total energy in kWh (each row spans one hour).
    pub fn total_energy_kwh(&self) -> f64 {
        self.values.sum()
    }

    /// Rows `start..end` as their own series.
    pub fn slice(&self, start: usize, end: usize) -> LoadSeries {
        LoadSeries {
            stations: self.stations.clone(),
            start: self.timestamp(start),
            values: self.values.slice_rows(start, end),
        }
    }
}

/// Spreads each event's energy uniformly over its duration and accumulates
/// it into hourly buckets per station.
///
/// The series starts at the hour containing the earliest event start and
/// ends with the hour containing the latest event end. Hours without
/// activity are explicit zeros. A zero-duration event deposits all of its
/// energy into its start hour.
pub fn resample_hourly(events: &[ChargingEvent], stations: &[String]) -> Result<LoadSeries> {
    if events.is_empty() {
        return Err(Error::Data("no charging events to resample".into()));
    }
    if stations.is_empty() {
        return Err(Error::Data("station list is empty".into()));
    }
    let column = |id: &str| {
        stations
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::Data(format!("event for unknown station '{id}'")))
    };
    let first = events.iter().map(|e| e.start).min().expect("nonempty");
    let origin = first
        .duration_trunc(Duration::hours(1))
        .map_err(|e| Error::Data(format!("cannot truncate {first}: {e}")))?;
    let secs = |t: DateTime<Utc>| (t - origin).num_milliseconds() as f64 / 1000.0;
    // Each event needs the hour holding its end, or its start hour when it
    // has no duration.
    let hours = events
        .iter()
        .map(|ev| {
            let (s, e) = (secs(ev.start), secs(ev.end));
            if e > s {
                (e / 3600.0).ceil() as usize
            } else {
                (s / 3600.0).floor() as usize + 1
            }
        })
        .max()
        .expect("nonempty");

    let mut values = Matrix::zeros(hours, stations.len());
    for ev in events {
        let col = column(&ev.station_id)?;
        let (s, e) = (secs(ev.start), secs(ev.end));
        let first_hour = (s / 3600.0).floor() as usize;
        if e <= s {
            let v = values.get(first_hour, col);
            values.set(first_hour, col, v + ev.energy_kwh);
            continue;
        }
        let duration = e - s;
        let last_hour = ((e / 3600.0).ceil() as usize).min(hours);
        for h in first_hour..last_hour {
            let lo = s.max(h as f64 * 3600.0);
            let hi = e.min((h + 1) as f64 * 3600.0);
            if hi > lo {
                let v = values.get(h, col);
                values.set(h, col, v + ev.energy_kwh * (hi - lo) / duration);
            }
        }
    }
    LoadSeries::new(stations.to_vec(), origin, values)
}

/// Sorted, deduplicated station ids appearing in `events`.
pub fn station_ids(events: &[ChargingEvent]) -> Vec<String> {
    let set: std::collections::BTreeSet<&str> =
        events.iter().map(|e| e.station_id.as_str()).collect();
    set.into_iter().map(String::from).collect()
}

/// Chronological train/validation/test fractions; test takes the remainder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
        }
    }
}

impl SplitFractions {
    /// Row indices where validation and test begin for a series of `len` rows.
    pub fn boundaries(&self, len: usize) -> (usize, usize) {
        // The nudge keeps e.g. (0.7 + 0.1)·10 from flooring to 7.
        let at = |f: f64| ((f * len as f64) + 1e-9).floor() as usize;
        (at(self.train).min(len), at(self.train + self.val).min(len))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: LoadSeries,
    pub val: LoadSeries,
    pub test: LoadSeries,
}

/// Contiguous chronological split; every segment must hold at least
/// `min_len` rows (usually `τ + α`).
pub fn split_series(series: &LoadSeries, fractions: SplitFractions, min_len: usize) -> Result<Splits> {
    if !(fractions.train > 0.0 && fractions.val >= 0.0 && fractions.train + fractions.val < 1.0) {
        return Err(Error::Parameter(format!("invalid split fractions {fractions:?}")));
    }
    let (b1, b2) = fractions.boundaries(series.len());
    let splits = Splits {
        train: series.slice(0, b1),
        val: series.slice(b1, b2),
        test: series.slice(b2, series.len()),
    };
    for (name, seg) in [("train", &splits.train), ("validation", &splits.val), ("test", &splits.test)] {
        if seg.len() < min_len {
            return Err(Error::Config(format!(
                "{name} segment has {} rows, need at least {min_len} (lookback + horizon) of {} total",
                seg.len(),
                series.len()
            )));
        }
    }
    Ok(splits)
}

/// One supervised pair cut from a series.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Index of the first input row in the source series.
    pub origin: usize,
    /// `τ×N` lookback block.
    pub input: Matrix,
    /// `α×N` target block.
    pub target: Matrix,
}

/// All stride-1 windows of `values` with `lookback` input and `horizon` target rows.
pub fn make_windows(values: &Matrix, lookback: usize, horizon: usize) -> Vec<WindowSample> {
    let span = lookback + horizon;
    if lookback == 0 || horizon == 0 || values.rows() < span {
        log::warn!(
            "series of {} rows too short for lookback {lookback} + horizon {horizon}; no windows",
            values.rows()
        );
        return Vec::new();
    }
    (0..=values.rows() - span)
        .map(|t| WindowSample {
            origin: t,
            input: values.slice_rows(t, t + lookback),
            target: values.slice_rows(t + lookback, t + span),
        })
        .collect()
}

/// Writes the hourly cache: a `timestamp` column then one kW column per
/// station with six decimals.
pub fn write_series<W: Write>(series: &LoadSeries, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["timestamp".to_string()];
    header.extend(series.stations.iter().cloned());
    w.write_record(&header)?;
    for r in 0..series.len() {
        let mut rec = Vec::with_capacity(series.n_stations() + 1);
        rec.push(format_timestamp(&series.timestamp(r)));
        rec.extend(series.values.row(r).iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a cache written by [`write_series`]; rows must be consecutive hours.
pub fn read_series<R: Read>(source: R) -> Result<LoadSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("timestamp") || headers.len() < 2 {
        return Err(Error::Data(
            "series cache must start with a 'timestamp' column followed by stations".into(),
        ));
    }
    let stations: Vec<String> = headers.iter().skip(1).map(String::from).collect();
    let mut start = None;
    let mut data = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| Error::Data(format!("bad timestamp '{}'", &record[0])))?;
        let origin = *start.get_or_insert(ts);
        if ts != origin + Duration::hours(rows as i64) {
            return Err(Error::Data(format!(
                "cache row {} at {ts} breaks the hourly sequence",
                rows + 1
            )));
        }
        for field in record.iter().skip(1) {
            data.push(
                field
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("bad load value '{field}'")))?,
            );
        }
        rows += 1;
    }
    let start = start.ok_or_else(|| Error::Data("series cache has no rows".into()))?;
    LoadSeries::new(stations.clone(), start, Matrix::from_vec(rows, stations.len(), data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(s: &str) -> DateTime<Utc> {
        parse_timestamp(s).unwrap()
    }

    fn event(station: &str, start: &str, end: &str, kwh: f64) -> ChargingEvent {
        ChargingEvent::new(station, 22.0, ts(start), ts(end), kwh).unwrap()
    }

    fn series(rows: usize, n: usize) -> LoadSeries {
        let data = (0..rows * n).map(|i| i as f64).collect();
        LoadSeries::new(
            (0..n).map(|i| format!("S{i}")).collect(),
            ts("2023-01-01T00:00:00Z"),
            Matrix::from_vec(rows, n, data).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn whole_hours_spread_evenly() {
        let evs = [event("A", "2023-01-01T01:00:00Z", "2023-01-01T03:00:00Z", 10.0)];
        let s = resample_hourly(&evs, &["A".into()]).unwrap();
        assert_eq!(s.start(), ts("2023-01-01T01:00:00Z"));
        assert_eq!(s.values().data(), &[5.0, 5.0]);
    }

    #[test]
    fn half_hour_offsets_split_in_half() {
        let evs = [
            event("A", "2023-01-01T01:30:00Z", "2023-01-01T02:30:00Z", 4.0),
            event("B", "2023-01-01T01:00:00Z", "2023-01-01T01:10:00Z", 1.0),
            event("B", "2023-01-01T04:00:00Z", "2023-01-01T04:00:00Z", 3.0),
        ];
        let s = resample_hourly(&evs, &["A".into(), "B".into()]).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.values().row(0), &[2.0, 1.0]);
        assert_eq!(s.values().row(1), &[2.0, 0.0]);
        // Empty hour.
        assert_eq!(s.values().row(2), &[0.0, 0.0]);
        // Zero-duration event lands in its start hour.
        assert_eq!(s.values().row(3), &[0.0, 3.0]);
    }

    #[test]
    fn unknown_station_and_empty_input_fail() {
        let evs = [event("Z", "2023-01-01T01:00:00Z", "2023-01-01T02:00:00Z", 1.0)];
        assert!(resample_hourly(&evs, &["A".into()]).is_err());
        assert!(resample_hourly(&[], &["A".into()]).is_err());
    }

    #[test]
    fn split_seventy_ten_twenty() {
        let s = series(100, 2);
        let sp = split_series(&s, SplitFractions::default(), 5).unwrap();
        assert_eq!((sp.train.len(), sp.val.len(), sp.test.len()), (70, 10, 20));
        let s = series(10, 1);
        let sp = split_series(&s, SplitFractions::default(), 1).unwrap();
        assert_eq!((sp.train.len(), sp.val.len(), sp.test.len()), (7, 1, 2));
    }

    #[test]
    fn split_too_short_is_config_error() {
        let s = series(100, 1);
        let err = split_series(&s, SplitFractions::default(), 11).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("validation"));
    }

    #[test]
    fn window_counts_and_indexing() {
        let s = series(100, 3);
        let w = make_windows(s.values(), 24, 6);
        assert_eq!(w.len(), 71);
        for (k, win) in w.iter().enumerate() {
            assert_eq!(win.origin, k);
            assert_eq!(win.target.row(0), s.values().row(k + 24));
            assert_eq!(win.input.row(0), s.values().row(k));
        }
        assert_eq!(make_windows(s.values(), 94, 6).len(), 1);
        assert!(make_windows(s.values(), 95, 6).is_empty());
    }

    #[test]
    fn cache_round_trip() {
        let evs = [
            event("A", "2023-01-01T01:30:00Z", "2023-01-01T02:30:00Z", 4.0),
            event("B", "2023-01-01T01:00:00Z", "2023-01-01T05:20:00Z", 7.0),
        ];
        let s = resample_hourly(&evs, &station_ids(&evs)).unwrap();
        let mut buf = Vec::new();
        write_series(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,A,B\n2023-01-01T01:00:00Z,2.000000,"));
        let back = read_series(buf.as_slice()).unwrap();
        assert_eq!(back.stations(), s.stations());
        assert_eq!(back.start(), s.start());
        assert!(back.values().max_abs_diff(s.values()) < 5e-7);
    }

    #[test]
    fn cache_with_gap_is_rejected() {
        let src = "timestamp,A\n2023-01-01T00:00:00Z,1\n2023-01-01T02:00:00Z,1\n";
        assert!(read_series(src.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn window_count_formula(t in 1usize..200, tau in 1usize..50, alpha in 1usize..30) {
            let s = series(t, 1);
            let n = make_windows(s.values(), tau, alpha).len();
            let expected = if t >= tau + alpha { t - tau - alpha + 1 } else { 0 };
            prop_assert_eq!(n, expected);
        }

        #[test]
        fn split_partitions_series(t in 10usize..500) {
            let s = series(t, 2);
            let sp = split_series(&s, SplitFractions::default(), 1).unwrap();
            let joined = Matrix::vstack(&[sp.train.values(), sp.val.values(), sp.test.values()]).unwrap();
            prop_assert_eq!(&joined, s.values());
            prop_assert_eq!(sp.val.start(), s.timestamp(sp.train.len()));
        }

        #[test]
        fn resampling_conserves_energy(
            specs in prop::collection::vec((0u32..3, 0i64..200_000, 0i64..30_000, 0.0f64..80.0), 1..60)
        ) {
            let base = ts("2023-03-01T00:00:00Z");
            let events: Vec<ChargingEvent> = specs
                .iter()
                .map(|&(st, off, dur, kwh)| {
                    let start = base + Duration::seconds(off);
                    ChargingEvent::new(format!("S{st}"), 7.0, start, start + Duration::seconds(dur), kwh).unwrap()
                })
                .collect();
            let total: f64 = events.iter().map(|e| e.energy_kwh).sum();
            let s = resample_hourly(&events, &station_ids(&events)).unwrap();
            prop_assert!(s.values().data().iter().all(|v| *v >= 0.0));
            prop_assert!((s.total_energy_kwh() - total).abs() <= 1e-6 * total.max(1.0));
        }
    }
}
