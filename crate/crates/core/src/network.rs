//! The interface shared by every trainable forecaster and the model tags
//! used to select forecasters by name.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Matrix, Mode, Parameterized, Tape, Var};
use crate::error::{Error, Result, Shape};

/// Forecaster identifiers in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelTag {
    Ma,
    Hi,
    Mlp,
    Gru,
    Lstm,
    Dlinear,
    Mstem,
}

impl ModelTag {
    pub const ALL: [ModelTag; 7] = [
        ModelTag::Ma,
        ModelTag::Hi,
        ModelTag::Mlp,
        ModelTag::Gru,
        ModelTag::Lstm,
        ModelTag::Dlinear,
        ModelTag::Mstem,
    ];

    /// Whether the forecaster has parameters fit by gradient descent.
    pub fn is_learned(self) -> bool {
        !matches!(self, ModelTag::Ma | ModelTag::Hi)
    }

    /// Lower-case identifier used on the command line and in files.
    pub fn key(self) -> &'static str {
        match self {
            ModelTag::Ma => "ma",
            ModelTag::Hi => "hi",
            ModelTag::Mlp => "mlp",
            ModelTag::Gru => "gru",
            ModelTag::Lstm => "lstm",
            ModelTag::Dlinear => "dlinear",
            ModelTag::Mstem => "mstem",
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelTag::Ma => "MA",
            ModelTag::Hi => "HI",
            ModelTag::Mlp => "MLP",
            ModelTag::Gru => "GRU",
            ModelTag::Lstm => "LSTM",
            ModelTag::Dlinear => "Dlinear",
            ModelTag::Mstem => "MSTEM",
        })
    }
}

impl FromStr for ModelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        ModelTag::ALL
            .into_iter()
            .find(|t| t.key() == lower)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown model '{s}' (expected one of ma, hi, mlp, gru, lstm, dlinear, mstem)"
                ))
            })
    }
}

/// A differentiable forecaster over standardized windows.
///
/// `forward` maps `B` windows of shape `τ×N` to a `B × (α·N)` prediction in
/// which row `b` is window `b`'s `α×N` forecast flattened row-major.
pub trait Network: Parameterized + Send {
    fn tag(&self) -> ModelTag;
    fn lookback(&self) -> usize;
    fn horizon(&self) -> usize;
    fn stations(&self) -> usize;

    fn forward(&mut self, tape: &mut Tape, windows: &[&Matrix], mode: Mode) -> Result<Var>;

    /// Eval-mode predictions, one `α×N` matrix per window.
    fn predict(&mut self, windows: &[&Matrix]) -> Result<Vec<Matrix>> {
        const CHUNK: usize = 256;
        let (alpha, n) = (self.horizon(), self.stations());
        let mut out = Vec::with_capacity(windows.len());
        let mut tape = Tape::new();
        for chunk in windows.chunks(CHUNK) {
            tape.reset(0);
            let y = self.forward(&mut tape, chunk, Mode::Eval)?;
            out.extend(split_rows(tape.value(y), alpha, n)?);
        }
        Ok(out)
    }
}

/// Checks that a batch of windows is nonempty and uniformly `τ×N`.
pub(crate) fn check_batch(windows: &[&Matrix], lookback: usize, stations: usize, who: &str) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::Contract(format!("{who} received an empty batch")));
    }
    for w in windows {
        if w.shape() != Shape(lookback, stations) {
            return Err(Error::dim(format!("{who} input window"), w.shape(), Shape(lookback, stations)));
        }
    }
    Ok(())
}

/// Flattens `α×N` targets into the `B × (α·N)` layout produced by `forward`.
pub fn stack_targets(targets: &[&Matrix]) -> Result<Matrix> {
    let first = targets
        .first()
        .ok_or_else(|| Error::Contract("no targets to stack".into()))?;
    let width = first.len();
    let mut out = Matrix::zeros(targets.len(), width);
    for (b, t) in targets.iter().enumerate() {
        if t.shape() != first.shape() {
            return Err(Error::dim("target batch", first.shape(), t.shape()));
        }
        out.row_mut(b).copy_from_slice(t.data());
    }
    Ok(out)
}

/// Inverse of [`stack_targets`].
pub fn split_rows(stacked: &Matrix, horizon: usize, stations: usize) -> Result<Vec<Matrix>> {
    if stacked.cols() != horizon * stations {
        return Err(Error::dim(
            "prediction layout",
            stacked.shape(),
            Shape(stacked.rows(), horizon * stations),
        ));
    }
    (0..stacked.rows())
        .map(|b| Matrix::from_vec(horizon, stations, stacked.row(b).to_vec()))
        .collect()
}

/// Single-row flattening of a batch of windows: `B × (τ·N)`.
pub(crate) fn flatten_windows(windows: &[&Matrix]) -> Matrix {
    let width = windows.first().map_or(0, |w| w.len());
    let mut out = Matrix::zeros(windows.len(), width);
    for (b, w) in windows.iter().enumerate() {
        out.row_mut(b).copy_from_slice(w.data());
    }
    out
}

/// Per-station histories stacked node-major: `(B·N) × τ`.
pub(crate) fn node_major(windows: &[&Matrix]) -> Matrix {
    let (tau, n) = windows.first().map_or((0, 0), |w| (w.rows(), w.cols()));
    let mut out = Matrix::zeros(windows.len() * n, tau);
    for (b, w) in windows.iter().enumerate() {
        for station in 0..n {
            let row = out.row_mut(b * n + station);
            for (t, dst) in row.iter_mut().enumerate() {
                *dst = w.get(t, station);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_round_trip_through_text() {
        for t in ModelTag::ALL {
            assert_eq!(t.key().parse::<ModelTag>().unwrap(), t);
            assert_eq!(t.to_string().parse::<ModelTag>().unwrap(), t);
        }
        assert!(matches!("arima".parse::<ModelTag>(), Err(Error::Parameter(_))));
        assert!(!ModelTag::Hi.is_learned() && ModelTag::Dlinear.is_learned());
    }

    #[test]
    fn stacking_round_trip() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let b = a.map(|v| -v);
        let s = stack_targets(&[&a, &b]).unwrap();
        assert_eq!(s.row(0), a.data());
        assert_eq!(split_rows(&s, 3, 2).unwrap(), vec![a, b]);
    }

    #[test]
    fn node_major_transposes_each_window() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let nm = node_major(&[&a, &a]);
        assert_eq!(nm.rows(), 4);
        assert_eq!(nm.row(1), &[2.0, 4.0, 6.0]);
        assert_eq!(nm.row(2), &[1.0, 3.0, 5.0]);
    }
}
