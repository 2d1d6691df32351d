//! Multi-station charging-load forecasting.
//!
//! The crate covers the whole pipeline: charging events are resampled into
//! hourly per-station load, split chronologically, standardized and cut
//! into supervised windows. A graph branch over the station network and a
//! recurrent branch over the raw window are trained jointly by a small
//! reverse-mode autodiff engine, alongside six comparison forecasters.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::large_enum_variant)]

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod forecaster;
pub mod gradcheck;
pub mod mgcl;
pub mod model;
pub mod network;
pub mod tenn;
pub mod training;

pub use error::{Error, Result};
pub use evaluation::{compute_metrics, run_comparison, CompareSpec, EvalOptions, ForecastReport, MetricTriple};
pub use forecaster::{Forecaster, LearnedModel, ModelSpec};
pub use model::{output_control, Mstem, MstemConfig};
pub use network::{ModelTag, Network};
pub use training::{train, TrainConfig, TrainLog};
