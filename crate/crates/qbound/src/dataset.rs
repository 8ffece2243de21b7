//! `dataset.bin`: magic `QBDS`, `u32` count, `u32` rank and `u32` extents,
//! `u8` has-labels flag, then `f32` inputs row-major and, if flagged, one
//! `u16` label per input. Everything little-endian.

use std::path::Path;

use qbound_core::infer::Dataset;

use crate::files::{FormatError, Result};

pub const MAGIC: &[u8; 4] = b"QBDS";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| FormatError::Dataset(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn read_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(FormatError::Dataset("bad magic, expected `QBDS`".into()));
    }
    let count = r.u32("count")? as usize;
    let rank = r.u32("rank")? as usize;
    let shape = (0..rank).map(|_| r.u32("extent").map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
    let labeled = match r.take(1, "label flag")?[0] {
        0 => false,
        1 => true,
        other => return Err(FormatError::Dataset(format!("label flag must be 0 or 1, got {other}"))),
    };
    let n: usize = shape.iter().product();
    let size = count
        .checked_mul(n)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| FormatError::Dataset("input block size overflows".into()))?;
    let raw = r.take(size, "inputs")?;
    let flat: Vec<f64> =
        raw.chunks_exact(4).map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes")))).collect();
    let inputs: Vec<Vec<f64>> =
        if n == 0 { vec![Vec::new(); count] } else { flat.chunks(n).map(<[f64]>::to_vec).collect() };
    let labels = if labeled {
        let raw = r.take(2 * count, "labels")?;
        Some(raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect())
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(FormatError::Dataset(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Dataset::new(shape, inputs, labels)?)
}

/// Inputs are narrowed to `f32`.
pub fn write_dataset(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(&(data.input_shape.len() as u32).to_le_bytes());
    for e in &data.input_shape {
        out.extend_from_slice(&(*e as u32).to_le_bytes());
    }
    out.push(u8::from(data.labels.is_some()));
    for v in data.inputs.iter().flatten() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for l in data.labels.iter().flatten() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|source| FormatError::Io { path: path.to_owned(), source })?;
    read_dataset(&bytes)
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    std::fs::write(path, write_dataset(data)).map_err(|source| FormatError::Io { path: path.to_owned(), source })
}
