//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats 64-bit little-endian:
//!
//! ```text
//! magic     8 bytes  "MSTEMCKP"
//! version   u64      currently 1
//! header    string   ModelSpec::to_block (includes the model tag)
//!                    plus a `config_digest=` line
//! scaler    u64 n, then n means, then n standard deviations (f64)
//! tensors   u64 count, then per tensor:
//!             string name, u64 rows, u64 cols, rows·cols f64 values
//! ```
//!
//! Strings are a u64 byte length followed by UTF-8 bytes. Tensors appear in
//! parameter visit order followed by buffers (batch-norm running
//! statistics), so the order is fixed by the architecture.

use std::io::{Read, Write};

use crate::autodiff::{Matrix, Parameterized};
use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::forecaster::{LearnedModel, ModelSpec};

pub const MAGIC: &[u8; 8] = b"MSTEMCKP";
pub const VERSION: u64 = 1;

/// Contents of a checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub model: LearnedModel,
    pub scaler: Scaler,
    /// Digest of the run configuration that produced the parameters.
    pub config_digest: String,
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u64(w, s.len() as u64)?;
    Ok(w.write_all(s.as_bytes())?)
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a length field and rejects sizes that cannot be genuine.
fn get_len(r: &mut impl Read, what: &str) -> Result<usize> {
    const LIMIT: u64 = 1 << 32;
    let n = get_u64(r)?;
    if n > LIMIT {
        return Err(Error::Checkpoint(format!("implausible {what} length {n}")));
    }
    Ok(n as usize)
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_len(r, "string")?;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    String::from_utf8(b).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| get_u64(r).map(f64::from_bits)).collect()
}

/// Collects `(name, tensor)` pairs in checkpoint order.
fn tensors(model: &mut LearnedModel) -> Vec<(String, Matrix)> {
    let mut out = Vec::new();
    model.visit_params(&mut |p| out.push((p.name().to_string(), p.value().clone())));
    model.visit_buffers(&mut |name, m| out.push((name.to_string(), m.clone())));
    out
}

pub fn save_checkpoint<W: Write>(
    spec: &ModelSpec,
    model: &LearnedModel,
    scaler: &Scaler,
    config_digest: &str,
    mut w: W,
) -> Result<()> {
    if config_digest.contains('\n') {
        return Err(Error::Parameter("config digest must be a single line".into()));
    }
    if !scaler.is_fit() {
        return Err(Error::Contract("cannot save a checkpoint with an unfit scaler".into()));
    }
    w.write_all(MAGIC)?;
    put_u64(&mut w, VERSION)?;
    put_str(&mut w, &format!("{}config_digest={config_digest}\n", spec.to_block()))?;
    put_u64(&mut w, scaler.mean().len() as u64)?;
    put_f64s(&mut w, scaler.mean())?;
    put_f64s(&mut w, scaler.std())?;
    let ts = tensors(&mut model.clone());
    put_u64(&mut w, ts.len() as u64)?;
    for (name, m) in &ts {
        put_str(&mut w, name)?;
        put_u64(&mut w, m.rows() as u64)?;
        put_u64(&mut w, m.cols() as u64)?;
        put_f64s(&mut w, m.data())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for a checkpoint".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = get_u64(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let header = get_str(&mut r)?;
    let spec = ModelSpec::from_block(&header)?;
    let config_digest = header
        .lines()
        .find_map(|l| l.strip_prefix("config_digest="))
        .unwrap_or_default()
        .to_string();
    let n = get_len(&mut r, "scaler")?;
    let mean = get_f64s(&mut r, n)?;
    let std = get_f64s(&mut r, n)?;
    let scaler = Scaler::from_parts(mean, std).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut model = LearnedModel::build(&spec).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let expected = tensors(&mut model);
    let count = get_len(&mut r, "tensor table")?;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, architecture has {}",
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(count);
    for (want_name, want) in &expected {
        let name = get_str(&mut r)?;
        let rows = get_len(&mut r, "rows")?;
        let cols = get_len(&mut r, "cols")?;
        if &name != want_name || (rows, cols) != (want.rows(), want.cols()) {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' {rows}x{cols} does not match '{want_name}' {}",
                want.shape()
            )));
        }
        loaded.push(Matrix::from_vec(rows, cols, get_f64s(&mut r, rows * cols)?)?);
    }
    let mut it = loaded.into_iter();
    model.visit_params(&mut |p| p.set_value(it.next().expect("count checked")));
    model.visit_buffers(&mut |_, m| *m = it.next().expect("count checked"));
    Ok(Checkpoint {
        spec,
        model,
        scaler,
        config_digest,
    })
}
