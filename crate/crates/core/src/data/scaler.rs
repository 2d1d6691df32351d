use crate::autodiff::Matrix;
use crate::error::{Error, Result, Shape};

/// Lower bound applied to a station's standard deviation before dividing.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-station standardization fit on the training segment.
///
/// A default-constructed scaler is unfit and refuses to transform.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scaler {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Scaler {
    /// Column means and population standard deviations of `train` (rows are hours).
    pub fn fit(train: &Matrix) -> Result<Self> {
        let (t, n) = (train.rows(), train.cols());
        if t == 0 || n == 0 {
            return Err(Error::Data("cannot fit a scaler on an empty segment".into()));
        }
        let mut mean = vec![0.0; n];
        for r in 0..t {
            for (m, v) in mean.iter_mut().zip(train.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= t as f64);
        let mut var = vec![0.0; n];
        for r in 0..t {
            for ((s, v), m) in var.iter_mut().zip(train.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / t as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    /// Identity transform over `n` stations.
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Rebuilds a scaler from stored statistics.
    pub fn from_parts(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Data("scaler statistics are inconsistent".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn is_fit(&self) -> bool {
        !self.mean.is_empty()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if !self.is_fit() {
            return Err(Error::Contract("scaler used before fit".into()));
        }
        if x.cols() != self.mean.len() {
            return Err(Error::dim(
                "scaler",
                Shape(1, self.mean.len()),
                x.shape(),
            ));
        }
        Ok(())
    }

    /// `(x − mean) / std` per station column.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    /// Inverse of [`Scaler::apply`].
    pub fn invert(&self, z: &Matrix) -> Result<Matrix> {
        self.check(z)?;
        let mut out = z.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }
}
