//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the backward rules it validates.

use crate::autodiff::{Parameterized, Tape, Var};
use crate::error::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Agreement between analytic and numeric gradients for one parameter tensor.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂ + ‖numeric‖₂, 1e-12)`.
    pub rel_error: f64,
    pub analytic_norm: f64,
}

/// Relative error between two gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-12)
}

/// Compares backward-pass gradients against central differences for every
/// parameter of `model`.
///
/// `loss` must record a scalar on the given tape and be deterministic for a
/// fixed tape seed; the tape is reset with `seed` before every evaluation.
pub fn check_model<M, F>(model: &mut M, seed: u64, mut loss: F) -> Result<Vec<GradReport>>
where
    M: Parameterized + ?Sized,
    F: FnMut(&mut M, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::with_seed(seed);
    model.zero_grad();
    let out = loss(model, &mut tape)?;
    tape.backward(out)?;
    model.absorb_grads(&tape);

    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit_params(&mut |p| analytic.push((p.name().to_string(), p.grad().data().to_vec())));
    model.zero_grad();

    let mut eval = |model: &mut M| -> Result<f64> {
        tape.reset(seed);
        let v = loss(model, &mut tape)?;
        Ok(tape.value(v).get(0, 0))
    };

    let mut reports = Vec::with_capacity(analytic.len());
    for (slot, (name, grad)) in analytic.into_iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (k, num) in numeric.iter_mut().enumerate() {
            let original = nth_param_value(model, slot, k);
            set_nth_param_value(model, slot, k, original + FD_STEP);
            let plus = eval(model)?;
            set_nth_param_value(model, slot, k, original - FD_STEP);
            let minus = eval(model)?;
            set_nth_param_value(model, slot, k, original);
            *num = (plus - minus) / (2.0 * FD_STEP);
        }
        reports.push(GradReport {
            name,
            rel_error: relative_error(&grad, &numeric),
            analytic_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        });
    }
    Ok(reports)
}

fn nth_param_value<M: Parameterized + ?Sized>(model: &mut M, slot: usize, k: usize) -> f64 {
    let mut i = 0;
    let mut out = f64::NAN;
    model.visit_params(&mut |p| {
        if i == slot {
            out = p.value().data()[k];
        }
        i += 1;
    });
    out
}

fn set_nth_param_value<M: Parameterized + ?Sized>(model: &mut M, slot: usize, k: usize, v: f64) {
    let mut i = 0;
    model.visit_params(&mut |p| {
        if i == slot {
            p.value_mut().data_mut()[k] = v;
        }
        i += 1;
    });
}
