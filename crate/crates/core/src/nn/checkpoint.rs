//! EMUP parameter checkpoints.
//!
//! Layout (little-endian): magic `EMUP`, `u32` version, `u32` parameter
//! count, then per parameter its name (`u16` byte length + UTF-8), `u32`
//! rank, `u32` extents and `f32` values.

use super::tensor::{Parameter, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EMUP";
pub const VERSION: u32 = 1;

/// One decoded checkpoint entry.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn write_checkpoint(params: &[&Parameter]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        let len =
            u16::try_from(name.len()).map_err(|_| Error::Config(format!("parameter name too long: {}", p.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &e in shape {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated {
                needed: self.pos.saturating_add(n),
                available: self.bytes.len(),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<StoredTensor>> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::invalid("checkpoint", "parameter name is not UTF-8"))?
            .to_string();
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::SizeMismatch(format!("{name}: extents overflow")))?;
        let raw = c.take(n.checked_mul(4).ok_or_else(|| Error::SizeMismatch(name.clone()))?)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(StoredTensor { name, shape, values });
    }
    if c.pos != bytes.len() {
        return Err(Error::SizeMismatch(format!(
            "{} trailing bytes after {count} parameters",
            bytes.len() - c.pos
        )));
    }
    Ok(out)
}

/// Copies stored values into parameters matched by name and shape. Every
/// parameter must be present exactly once.
pub fn load_into(params: &mut [&mut Parameter], stored: &[StoredTensor]) -> Result<()> {
    if stored.len() != params.len() {
        return Err(Error::invalid(
            "checkpoint",
            format!("{} stored tensors for {} parameters", stored.len(), params.len()),
        ));
    }
    for p in params.iter_mut() {
        let s = stored
            .iter()
            .find(|s| s.name == p.name)
            .ok_or_else(|| Error::invalid("checkpoint", format!("missing parameter {}", p.name)))?;
        if s.shape != p.value.shape() {
            return Err(Error::invalid(
                "checkpoint",
                format!("{}: stored shape {:?}, expected {:?}", p.name, s.shape, p.value.shape()),
            ));
        }
        p.value = Tensor::from_vec(&s.shape, s.values.iter().map(|&v| f64::from(v)).collect())?;
        p.value.ensure_finite("checkpoint values")?;
        p.zero_grad();
    }
    Ok(())
}
