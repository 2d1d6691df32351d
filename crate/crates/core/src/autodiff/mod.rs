//! Minimal reverse-mode differentiation over dense `f64` matrices, plus the
//! Adam optimizer.

mod adam;
mod matrix;
mod param;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use matrix::Matrix;
pub use param::{Param, Parameterized};
pub use tape::{huber, Activation, BatchMoments, Mode, NormStats, Tape, Var, BN_EPSILON};
