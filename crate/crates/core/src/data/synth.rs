//! Seeded synthetic charging sessions with diurnal and weekly structure.

use std::f64::consts::TAU;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::events::{ChargingEvent, KindFilter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub stations: usize,
    pub days: usize,
    pub seed: u64,
    /// `Fast` and `Slow` give uniform equipment; `All` alternates 22 kW and 7 kW.
    pub kind: KindFilter,
    /// Mean session arrivals per station-hour at the diurnal peak.
    pub peak_rate: f64,
    pub start: DateTime<Utc>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            stations: 4,
            days: 90,
            seed: 7,
            kind: KindFilter::Fast,
            peak_rate: 1.2,
            start: Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap(),
        }
    }
}

fn rated_kw(kind: KindFilter, station: usize) -> f64 {
    match kind {
        KindFilter::Fast => 22.0,
        KindFilter::Slow => 7.0,
        KindFilter::All if station.is_multiple_of(2) => 22.0,
        KindFilter::All => 7.0,
    }
}

/// Generates sessions whose arrival intensity follows a daily sinusoid
/// (phase-shifted per station), a weekly modulation and a day-level factor
/// shared by all stations.
///
/// Timestamps are whole seconds and energies have four decimals, so the
/// result survives a write/ingest round trip unchanged.
pub fn generate_events(config: &SynthConfig) -> Result<Vec<ChargingEvent>> {
    if config.stations == 0 || config.days == 0 {
        return Err(Error::Parameter("synthetic generator needs ≥1 station and ≥1 day".into()));
    }
    if !(config.peak_rate > 0.0) {
        return Err(Error::Parameter("peak rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let day_factor: Vec<f64> = (0..config.days).map(|_| rng.random_range(0.75..1.25)).collect();
    let hours = config.days * 24;
    let mut events = Vec::new();
    for station in 0..config.stations {
        let kw = rated_kw(config.kind, station);
        let phase = 1.5 * station as f64;
        let (min_h, max_h) = if kw >= 15.0 { (0.3, 1.5) } else { (1.0, 4.0) };
        let id = format!("ST{:02}", station + 1);
        for h in 0..hours {
            let hour_of_day = (h % 24) as f64;
            let day = h / 24;
            let daily = 1.0 + 0.9 * (TAU * (hour_of_day - 8.0 - phase) / 24.0).sin();
            let weekly = 1.0 + 0.3 * (TAU * (day % 7) as f64 / 7.0).cos();
            let rate = config.peak_rate / 1.9 * daily.max(0.05) * weekly * day_factor[day];
            let arrivals = Poisson::new(rate)
                .map_err(|e| Error::Parameter(format!("arrival rate {rate}: {e}")))?
                .sample(&mut rng) as usize;
            for _ in 0..arrivals {
                let offset = rng.random_range(0..3600);
                let duration_h: f64 = rng.random_range(min_h..max_h);
                let duration_s = (duration_h * 3600.0).round() as i64;
                let utilization: f64 = rng.random_range(0.6..1.0);
                let energy = (kw * duration_h * utilization * 1e4).round() / 1e4;
                let start = config.start + Duration::seconds(h as i64 * 3600 + offset);
                let end = start + Duration::seconds(duration_s);
                let ev = ChargingEvent::new(id.clone(), kw, start, end, energy)
                    .map_err(|r| Error::Data(format!("generator produced invalid event: {r}")))?;
                events.push(ev);
            }
        }
    }
    events.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.station_id.cmp(&b.station_id)));
    Ok(events)
}
