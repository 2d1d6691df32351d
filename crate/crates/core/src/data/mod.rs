//! Charging-event ingestion, hourly resampling, chronological splits,
//! standardization and supervised windowing.

mod dataset;
mod events;
mod scaler;
mod series;
mod synth;

pub use dataset::{prepare_dataset, PreparedData};
pub use events::{
    format_timestamp, ingest_events, parse_timestamp, write_events, ChargingEvent, ConnectorKind,
    IngestReport, KindFilter, RejectReason, RejectedRow, EVENT_COLUMNS, FAST_THRESHOLD_KW,
    MAX_REJECT_FRACTION,
};
pub use scaler::{Scaler, STD_FLOOR};
pub use series::{
    make_windows, read_series, resample_hourly, split_series, station_ids, write_series,
    LoadSeries, SplitFractions, Splits, WindowSample,
};
pub use synth::{generate_events, SynthConfig};
