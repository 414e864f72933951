//! Binary parameter container.
//!
//! Layout, all integers `u32` little-endian: magic `TNLC`, version, layer
//! count, then per layer `rows`, `cols`, `rows * cols` weights and `cols`
//! biases as `f32` little-endian.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::Layer;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TNLC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_parameters(layers: &[Layer<f32>]) -> Vec<u8> {
    try_encode(layers).expect("layer sizes fit in u32")
}

fn try_encode(layers: &[Layer<f32>]) -> Result<Vec<u8>> {
    let payload: usize = layers.iter().map(|l| 8 + 4 * l.param_count()).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize)?;
    put_u32(&mut out, layers.len())?;
    for layer in layers {
        let (rows, cols) = layer.shape();
        put_u32(&mut out, rows)?;
        put_u32(&mut out, cols)?;
        for v in layer.weight.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in layer.bias.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| {
            Error::Checkpoint("parameter count overflows".into())
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn decode_parameters(bytes: &[u8]) -> Result<Vec<Layer<f32>>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a TNLC file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rows = r.u32()?;
        let cols = r.u32()?;
        let weight = Array2::from_shape_vec((rows, cols), r.f32s(rows * cols)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let bias = Array1::from_vec(r.f32s(cols)?);
        layers.push(Layer { weight, bias });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(layers)
}

pub fn write_checkpoint(path: &Path, layers: &[Layer<f32>]) -> Result<()> {
    fs::write(path, try_encode(layers)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<Layer<f32>>> {
    decode_parameters(&fs::read(path)?)
}
