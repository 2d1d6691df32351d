use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};

use crate::error::{Error, Result};

/// Rated power at or above which equipment counts as fast charging (kW).
pub const FAST_THRESHOLD_KW: f64 = 15.0;

/// Fraction of rejected rows above which ingestion fails outright.
pub const MAX_REJECT_FRACTION: f64 = 0.5;

/// Required columns of the event file, in canonical order.
pub const EVENT_COLUMNS: [&str; 5] = [
    "station_id",
    "connector_kw",
    "start_time",
    "end_time",
    "energy_kwh",
];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConnectorKind {
    Fast,
    Slow,
}

impl ConnectorKind {
    pub fn from_rated_kw(kw: f64) -> Self {
        if kw >= FAST_THRESHOLD_KW {
            ConnectorKind::Fast
        } else {
            ConnectorKind::Slow
        }
    }
}

/// Which equipment class to keep during ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KindFilter {
    Fast,
    Slow,
    #[default]
    All,
}

impl KindFilter {
    pub fn accepts(self, kind: ConnectorKind) -> bool {
        match self {
            KindFilter::All => true,
            KindFilter::Fast => kind == ConnectorKind::Fast,
            KindFilter::Slow => kind == ConnectorKind::Slow,
        }
    }
}

impl FromStr for KindFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fast" => Ok(KindFilter::Fast),
            "slow" => Ok(KindFilter::Slow),
            "all" => Ok(KindFilter::All),
            other => Err(Error::Parameter(format!(
                "unknown kind filter '{other}', expected fast, slow or all"
            ))),
        }
    }
}

impl fmt::Display for KindFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KindFilter::Fast => "fast",
            KindFilter::Slow => "slow",
            KindFilter::All => "all",
        })
    }
}

/// One charging session.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargingEvent {
    pub station_id: String,
    pub rated_kw: f64,
    pub kind: ConnectorKind,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub energy_kwh: f64,
}

impl ChargingEvent {
    /// Validates the session invariants (`end ≥ start`, `energy ≥ 0`).
    pub fn new(
        station_id: impl Into<String>,
        rated_kw: f64,
        start: DateTime<Utc>,
        end: DateTime<Utc>,
        energy_kwh: f64,
    ) -> Result<Self, RejectReason> {
        if end < start {
            return Err(RejectReason::NegativeDuration);
        }
        if !(energy_kwh >= 0.0) || !energy_kwh.is_finite() {
            return Err(RejectReason::NegativeEnergy);
        }
        if !(rated_kw >= 0.0) || !rated_kw.is_finite() {
            return Err(RejectReason::BadNumber("connector_kw"));
        }
        let station_id = station_id.into();
        if station_id.is_empty() {
            return Err(RejectReason::MissingStation);
        }
        Ok(Self {
            kind: ConnectorKind::from_rated_kw(rated_kw),
            station_id,
            rated_kw,
            start,
            end,
            energy_kwh,
        })
    }

    /// Duration in hours.
    pub fn duration_hours(&self) -> f64 {
        (self.end - self.start).num_milliseconds() as f64 / 3_600_000.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    NegativeDuration,
    NegativeEnergy,
    BadTimestamp(&'static str),
    BadNumber(&'static str),
    MissingStation,
    Malformed(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::NegativeDuration => f.write_str("negative duration"),
            RejectReason::NegativeEnergy => f.write_str("negative energy"),
            RejectReason::BadTimestamp(col) => write!(f, "unparseable timestamp in {col}"),
            RejectReason::BadNumber(col) => write!(f, "unparseable number in {col}"),
            RejectReason::MissingStation => f.write_str("empty station_id"),
            RejectReason::Malformed(msg) => write!(f, "malformed row: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    /// 1-based line number in the source, header included.
    pub line: u64,
    pub reason: RejectReason,
}

/// Outcome of reading an event file.
#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub events: Vec<ChargingEvent>,
    pub rejected: Vec<RejectedRow>,
    /// Valid rows dropped because their equipment class did not match the filter.
    pub filtered_out: usize,
    pub total_rows: usize,
}

/// Parses an ISO-8601 timestamp; values without an offset are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    const NAIVE: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    NAIVE
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|n| n.and_utc())
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

fn parse_row(fields: &[&str]) -> Result<ChargingEvent, RejectReason> {
    let [station, kw, start, end, energy] = fields else {
        return Err(RejectReason::Malformed(format!(
            "expected 5 fields, got {}",
            fields.len()
        )));
    };
    let rated_kw: f64 = kw
        .trim()
        .parse()
        .map_err(|_| RejectReason::BadNumber("connector_kw"))?;
    let start = parse_timestamp(start).ok_or(RejectReason::BadTimestamp("start_time"))?;
    let end = parse_timestamp(end).ok_or(RejectReason::BadTimestamp("end_time"))?;
    let energy: f64 = energy
        .trim()
        .parse()
        .map_err(|_| RejectReason::BadNumber("energy_kwh"))?;
    ChargingEvent::new(station.trim(), rated_kw, start, end, energy)
}

/// Reads charging events from delimited text with a header row.
///
/// Columns are located by name. Rows that fail validation are collected in
/// [`IngestReport::rejected`]; if more than half of all rows are rejected the
/// whole ingestion fails.
pub fn ingest_events<R: Read>(source: R, filter: KindFilter) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let mut positions = [0usize; 5];
    for (slot, col) in positions.iter_mut().zip(EVENT_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(col))
            .ok_or_else(|| Error::Data(format!("event file is missing column '{col}'")))?;
    }

    let mut report = IngestReport::default();
    for (i, record) in reader.records().enumerate() {
        report.total_rows += 1;
        let line = record
            .as_ref()
            .ok()
            .and_then(|r| r.position())
            .map_or(i as u64 + 2, |p| p.line());
        let parsed = match &record {
            Ok(rec) => {
                let fields: Option<Vec<&str>> = positions.iter().map(|&p| rec.get(p)).collect();
                match fields {
                    Some(f) => parse_row(&f),
                    None => Err(RejectReason::Malformed("missing fields".into())),
                }
            }
            Err(e) => Err(RejectReason::Malformed(e.to_string())),
        };
        match parsed {
            Ok(ev) if filter.accepts(ev.kind) => report.events.push(ev),
            Ok(_) => report.filtered_out += 1,
            Err(reason) => report.rejected.push(RejectedRow { line, reason }),
        }
    }

    let rejected = report.rejected.len();
    if report.total_rows > 0 && rejected as f64 > MAX_REJECT_FRACTION * report.total_rows as f64 {
        return Err(Error::Ingestion {
            rejected,
            total: report.total_rows,
            first_reason: report.rejected[0].reason.to_string(),
        });
    }
    Ok(report)
}

/// Writes events in the canonical column order.
pub fn write_events<W: Write>(events: &[ChargingEvent], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(EVENT_COLUMNS)?;
    for ev in events {
        w.write_record([
            ev.station_id.clone(),
            format!("{}", ev.rated_kw),
            format_timestamp(&ev.start),
            format_timestamp(&ev.end),
            format!("{:.4}", ev.energy_kwh),
        ])?;
    }
    w.flush()?;
    Ok(())
}
