//! Mini-batch training with Adam, Huber loss and best-validation selection.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, AdamConfig, Matrix, Mode, Tape};
use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::network::{stack_targets, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub huber_delta: f64,
    pub seed: u64,
    /// Shuffle training windows each epoch; otherwise keep chronological order.
    pub shuffle: bool,
    /// Return the parameters of the best validation epoch rather than the last.
    pub select_best: bool,
    /// Rescale the gradient to at most this Euclidean norm.
    pub clip_grad: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 50,
            huber_delta: 1.0,
            seed: 42,
            shuffle: true,
            select_best: true,
            clip_grad: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Parameter("batch size and epochs must be ≥ 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning rate {} must be ≥ 0", self.learning_rate)));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Parameter(format!("huber delta {} must be > 0", self.huber_delta)));
        }
        if let Some(c) = self.clip_grad {
            if !(c > 0.0) {
                return Err(Error::Parameter(format!("gradient clip {c} must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean Huber loss over the epoch's batches.
    pub train_loss: f64,
    /// Standardized-unit MSE on the validation windows.
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation MSE (first on ties).
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }

    /// Delimited text with columns `epoch,train_loss,val_mse,seconds`.
    /// Lines starting with `#` carry metadata.
    pub fn write_csv<W: Write>(&self, mut w: W, metadata: &[(&str, String)]) -> Result<()> {
        for (k, v) in metadata {
            writeln!(w, "# {k}: {v}")?;
        }
        writeln!(w, "epoch,train_loss,val_mse,seconds")?;
        for e in &self.epochs {
            writeln!(w, "{},{:.9},{:.9},{:.3}", e.epoch, e.train_loss, e.val_mse, e.seconds)?;
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Index batches for one epoch. The order is a permutation derived from
/// `(seed, epoch)` when `shuffle` is set and chronological otherwise.
pub fn batch_iter(count: usize, batch_size: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..count).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64));
        order.shuffle(&mut rng);
    }
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Mean squared error of eval-mode predictions against window targets.
pub fn validation_mse<M: Network + ?Sized>(model: &mut M, windows: &[WindowSample]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Contract("no validation windows".into()));
    }
    let inputs: Vec<&Matrix> = windows.iter().map(|w| &w.input).collect();
    let preds = model.predict(&inputs)?;
    let mut sum = 0.0;
    let mut cells = 0usize;
    for (p, w) in preds.iter().zip(windows) {
        for (a, b) in p.data().iter().zip(w.target.data()) {
            sum += (a - b) * (a - b);
        }
        cells += p.len();
    }
    Ok(sum / cells as f64)
}

/// Trains `model` on standardized windows and returns the selected
/// parameters with the per-epoch log.
pub fn train<M: Network + Clone>(
    mut model: M,
    train_windows: &[WindowSample],
    val_windows: &[WindowSample],
    config: &TrainConfig,
) -> Result<(M, TrainLog)> {
    config.validate()?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::Config(format!(
            "training needs windows in both segments (train {}, validation {})",
            train_windows.len(),
            val_windows.len()
        )));
    }
    let mut adam = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..Default::default()
    });
    let mut tape = Tape::new();
    let mut log = TrainLog::default();
    let mut best: Option<M> = None;
    let mut best_val = f64::INFINITY;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let batches = batch_iter(train_windows.len(), config.batch_size, config.seed, epoch, config.shuffle);
        let mut loss_sum = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let inputs: Vec<&Matrix> = idx.iter().map(|&i| &train_windows[i].input).collect();
            let targets: Vec<&Matrix> = idx.iter().map(|&i| &train_windows[i].target).collect();
            let target = stack_targets(&targets)?;
            tape.reset(mix_seed(config.seed, ((epoch as u64) << 32) | bi as u64));
            let y = model.forward(&mut tape, &inputs, Mode::Train)?;
            let loss = tape.huber_loss(y, &target, config.huber_delta)?;
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(Error::NonFinite { epoch, batch: bi });
            }
            loss_sum += value;
            tape.backward(loss)?;
            model.absorb_grads(&tape);
            if let Some(limit) = config.clip_grad {
                let norm = model.grad_norm();
                if norm > limit {
                    let k = limit / norm;
                    model.visit_params(&mut |p| p.grad_mut().scale_in_place(k));
                }
            }
            adam.step(&mut model);
        }
        let val_mse = validation_mse(&mut model, val_windows)?;
        if !val_mse.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                batch: batches.len(),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_mse,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train loss {:.6}, validation mse {:.6}",
            record.train_loss,
            record.val_mse
        );
        log.epochs.push(record);
        if val_mse < best_val {
            best_val = val_mse;
            log.best_epoch = epoch;
            if config.select_best {
                best = Some(model.clone());
            }
        }
    }
    Ok((best.unwrap_or(model), log))
}
