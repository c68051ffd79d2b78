//! On-disk formats.
//!
//! * Tensors: `PSVT` binary files (see [`tensor`]).
//! * Catalogues: JSON with an echoed model configuration (see [`catalogue`]).
//! * Chains: a directory of tensors plus `index.json` (see [`chain`]).
//! * Benchmark manifests: JSON (see [`manifest`]).
//!
//! Every write goes through a temporary file in the destination directory
//! followed by a rename, so readers never observe partial files.

pub mod catalogue;
pub mod chain;
pub mod manifest;
pub mod tensor;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter};

use synaptrace_core::{IntensityField, ObservationStack};

use crate::error::{Error, Result};

pub use catalogue::{read_catalogue, write_catalogue, CatalogueDoc, ModelConfigDoc};
pub use chain::{read_chain, write_chain};
pub use manifest::{read_manifest, write_manifest, BenchmarkManifest, RunEntry};
pub use manifest::resolve;
pub use tensor::{read_tensor, write_tensor, Dtype, Tensor, TensorData};

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Compact JSON with every float written to 17 significant digits.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExactFloats;

impl Formatter for ExactFloats {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        CompactFormatter.write_f32(writer, value)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ExactFloats);
    value.serialize(&mut ser).map_err(|e| Error::json("serialization", e))?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display(), e))
}

/// Observation stacks are u32 tensors of shape `[T, grid...]`.
pub fn write_observations(path: &Path, obs: &ObservationStack) -> Result<()> {
    let mut shape = vec![obs.num_times];
    shape.extend_from_slice(&obs.grid_shape);
    write_tensor(path, &Tensor::from_u32(shape, obs.counts.clone())?)
}

pub fn read_observations(path: &Path) -> Result<ObservationStack> {
    let t = read_tensor(path)?;
    if t.shape.len() < 3 {
        return Err(Error::Schema(format!("observation tensor needs shape [T, grid...], got {:?}", t.shape)));
    }
    let shape = t.shape.clone();
    let counts = t.into_u32(&shape)?;
    Ok(ObservationStack::new(shape[1..].to_vec(), shape[0], counts)?)
}

/// Intensity stacks are f64 tensors of shape `[T, grid...]`.
pub fn write_intensity(path: &Path, fields: &[IntensityField], grid_shape: &[usize]) -> Result<()> {
    let mut shape = vec![fields.len()];
    shape.extend_from_slice(grid_shape);
    let values = fields.iter().flat_map(|f| f.values.iter().copied()).collect();
    write_tensor(path, &Tensor::from_f64(shape, values)?)
}

pub fn read_intensity(path: &Path) -> Result<(Vec<IntensityField>, Vec<usize>)> {
    let t = read_tensor(path)?;
    if t.shape.len() < 3 {
        return Err(Error::Schema(format!("intensity tensor needs shape [T, grid...], got {:?}", t.shape)));
    }
    let shape = t.shape.clone();
    let values = t.into_f64(&shape)?;
    let v: usize = shape[1..].iter().product();
    let fields = values
        .chunks(v)
        .enumerate()
        .map(|(time_index, c)| IntensityField { time_index, values: c.to_vec() })
        .collect();
    Ok((fields, shape[1..].to_vec()))
}
