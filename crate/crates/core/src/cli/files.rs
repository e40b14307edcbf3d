//! Binary field and model files, CSV and JSON reports.
//!
//! Field file: `SVF1`, u32 V, u32 3, then `3 V^3` f32 in grid storage order.
//! Model file: `PDM1`, u32 V, u32 K, u64 n, then as f64 the mean (`3 V^3`),
//! the K eigenvalues, the K components one after another, and the total
//! variance. All little-endian.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::GridField;
use crate::pdm::PdmModel;

const FIELD_MAGIC: &[u8; 4] = b"SVF1";
const MODEL_MAGIC: &[u8; 4] = b"PDM1";

/// The field as it will read back from disk: every value rounded to f32.
pub fn quantize_field(field: &GridField) -> GridField {
    field.map(|p| p.map(|c| c as f32 as f64)).expect("same grid size")
}

pub fn encode_field(field: &GridField) -> Vec<u8> {
    let v = field.nodes_per_axis();
    let mut out = Vec::with_capacity(12 + 12 * field.values().len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    for c in field.to_flat() {
        out.extend_from_slice(&(c as f32).to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<GridField> {
    let mut r = Reader::new(bytes);
    r.magic(FIELD_MAGIC)?;
    let v = r.u32()? as usize;
    let d = r.u32()?;
    if d != 3 {
        return Err(Error::Format(format!("field has {d} components, expected 3")));
    }
    let count = 3 * v.checked_pow(3).ok_or_else(|| Error::Format(format!("grid size {v} is too large")))?;
    r.expect_remaining(4 * count)?;
    let flat: Vec<f64> = (0..count).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
    GridField::from_flat(v, &flat).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_field(field: &GridField, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_field(field))
}

pub fn load_field(path: impl AsRef<Path>) -> Result<GridField> {
    let path = path.as_ref();
    decode_field(&fs::read(path).map_err(|e| Error::io(path, e))?).map_err(|e| in_file(e, path))
}

pub fn encode_model(model: &PdmModel) -> Result<Vec<u8>> {
    model.validate()?;
    let k = model.n_components();
    let mut out = Vec::with_capacity(20 + 8 * (model.dimension() * (k + 1) + k + 1));
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(model.grid_size as u32).to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&model.n_samples.to_le_bytes());
    // column-major storage lays the components out one after another
    for x in model.mean.iter().chain(&model.eigenvalues).chain(model.components.iter()).chain([&model.total_variance]) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<PdmModel> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let v = r.u32()? as usize;
    let k = r.u32()? as usize;
    let n_samples = r.u64()?;
    let d = v
        .checked_pow(3)
        .and_then(|c| c.checked_mul(3))
        .ok_or_else(|| Error::Format(format!("grid size {v} is too large")))?;
    r.expect_remaining(8 * (d * (k + 1) + k + 1))?;
    let mut take = |n: usize| (0..n).map(|_| r.f64()).collect::<Result<Vec<f64>>>();
    let mean = DVector::from_vec(take(d)?);
    let eigenvalues = take(k)?;
    let components = DMatrix::from_vec(d, k, take(d * k)?);
    let total_variance = take(1)?[0];
    let model = PdmModel {
        grid_size: v,
        mean,
        components,
        eigenvalues,
        n_samples,
        total_variance,
    };
    model.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(model)
}

pub fn save_model(model: &PdmModel, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_model(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PdmModel> {
    let path = path.as_ref();
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?).map_err(|e| in_file(e, path))
}

/// Writes a header line and one comma-separated line per row.
pub fn write_csv<R: AsRef<[String]>>(path: impl AsRef<Path>, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let _ = writeln!(s, "{}", row.as_ref().join(","));
    }
    write_bytes(path.as_ref(), s.as_bytes())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    write_bytes(path.as_ref(), s.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn in_file(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let chunk = self
            .bytes
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::Format("file is truncated".into()))?;
        self.pos += N;
        Ok(chunk.try_into().expect("chunk has N bytes"))
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if &self.take::<4>()? != magic {
            return Err(Error::Format(format!("missing {} magic", String::from_utf8_lossy(magic))));
        }
        Ok(())
    }

    fn expect_remaining(&self, n: usize) -> Result<()> {
        let left = self.bytes.len() - self.pos;
        if left != n {
            return Err(Error::Format(format!("expected {n} payload bytes, found {left}")));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}
