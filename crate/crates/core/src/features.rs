//! Per-region feature tables and the EMUF binary container.
//!
//! Layout (little-endian): magic `EMUF`, `u32` version (1), `u32` region
//! count N, `u32` dimension D, then N region records of 20 bytes each
//! (four `f32` box coordinates, `u8` subject flag, `u8` edit label code,
//! `u16` reserved zero), then N×D `f32` features in row-major order.

use crate::data::{BBox, EditLabel, Region};
use crate::error::{Error, Result};
use crate::hash;

pub const MAGIC: [u8; 4] = *b"EMUF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const REGION_RECORD_LEN: usize = 20;

/// Amplitude of the noise dimensions written by [`synth_features`].
pub const SYNTH_NOISE_SCALE: f64 = 0.25;
/// Dimensions that carry region attributes in synthetic features.
pub const SYNTH_ATTRIBUTE_DIMS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    /// Not stored in EMUF; callers name tables by file.
    pub image_id: String,
    pub regions: Vec<Region>,
    /// Row-major `regions.len() × dim`.
    pub features: Vec<f64>,
    pub dim: usize,
}

impl FeatureTable {
    pub fn new(image_id: impl Into<String>, regions: Vec<Region>, features: Vec<f64>, dim: usize) -> Result<Self> {
        let t = FeatureTable {
            image_id: image_id.into(),
            regions,
            features,
            dim,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn empty(dim: usize) -> Self {
        FeatureTable {
            image_id: String::new(),
            regions: Vec::new(),
            features: Vec::new(),
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid(&self.image_id, "feature dimension must be positive"));
        }
        if self.features.len() != self.regions.len() * self.dim {
            return Err(Error::invalid(
                &self.image_id,
                format!(
                    "{} feature values for {} regions of dimension {}",
                    self.features.len(),
                    self.regions.len(),
                    self.dim
                ),
            ));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature table"));
        }
        Ok(())
    }

    /// Keeps the listed rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> FeatureTable {
        let mut regions = Vec::with_capacity(rows.len());
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        for (new_index, &i) in rows.iter().enumerate() {
            let mut r = self.regions[i].clone();
            r.index = new_index;
            regions.push(r);
            features.extend_from_slice(self.row(i));
        }
        FeatureTable {
            image_id: self.image_id.clone(),
            regions,
            features,
            dim: self.dim,
        }
    }
}

pub fn write_features(t: &FeatureTable) -> Vec<u8> {
    let n = t.regions.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * REGION_RECORD_LEN + t.features.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(t.dim as u32).to_le_bytes());
    for r in &t.regions {
        for c in r.bbox.to_array() {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        out.push(r.is_subject as u8);
        out.push(r.edit_label.code());
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    for v in &t.features {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                needed: end,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_features(bytes: &[u8]) -> Result<FeatureTable> {
    if bytes.len() >= 4 && bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: bytes[..4].try_into().unwrap(),
        });
    }
    let mut r = Reader { bytes, pos: 0 };
    r.take(4)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = r.u32()? as usize;
    let dim = r.u32()? as usize;

    let expected = n
        .checked_mul(dim)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|f| n.checked_mul(REGION_RECORD_LEN).and_then(|m| m.checked_add(f)))
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::SizeMismatch(format!("N={n}, D={dim} overflows")))?;
    if bytes.len() > expected {
        return Err(Error::SizeMismatch(format!(
            "N={n}, D={dim} implies {expected} bytes but payload has {}",
            bytes.len()
        )));
    }
    if bytes.len() < expected {
        return Err(Error::Truncated {
            needed: expected,
            available: bytes.len(),
        });
    }
    if n > 0 && dim == 0 {
        return Err(Error::SizeMismatch(format!("{n} regions with zero feature dimension")));
    }

    let mut regions = Vec::with_capacity(n);
    for index in 0..n {
        let coords = [r.f32()?, r.f32()?, r.f32()?, r.f32()?].map(f64::from);
        let meta = r.take(4)?;
        let subject = match meta[0] {
            0 => false,
            1 => true,
            other => return Err(Error::invalid("emuf", format!("region {index}: subject flag {other}"))),
        };
        let label = EditLabel::from_code(meta[1])
            .ok_or_else(|| Error::invalid("emuf", format!("region {index}: label code {}", meta[1])))?;
        if meta[2..] != [0, 0] {
            return Err(Error::invalid(
                "emuf",
                format!("region {index}: reserved bytes not zero"),
            ));
        }
        let bbox = BBox::new(coords[0], coords[1], coords[2], coords[3])
            .map_err(|e| Error::invalid("emuf", format!("region {index}: {e}")))?;
        regions.push(Region::new(index, bbox, subject, label));
    }
    let mut features = Vec::with_capacity(n * dim);
    for _ in 0..n * dim {
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(Error::NonFinite("EMUF feature payload"));
        }
        features.push(f64::from(v));
    }
    Ok(FeatureTable {
        image_id: String::new(),
        regions,
        features,
        dim,
    })
}

/// Deterministic stand-in for detector features.
///
/// Dimensions 0–3 hold the box divided by the frame spanned by all regions
/// (largest `x2`, largest `y2`), dimension 4 the subject flag, dimensions
/// 5–7 a one-hot of introduced/altered/missing (all zero for `none`), and the
/// rest uniform noise in `±SYNTH_NOISE_SCALE` keyed by `(seed, region
/// index, dimension)`. Values are rounded to `f32` so tables survive EMUF
/// round-trips unchanged.
pub fn synth_features(regions: &[Region], seed: u64, dim: usize) -> Result<FeatureTable> {
    if dim < SYNTH_ATTRIBUTE_DIMS {
        return Err(Error::Config(format!(
            "synthetic features need at least {SYNTH_ATTRIBUTE_DIMS} dimensions, got {dim}"
        )));
    }
    let frame_w = regions.iter().map(|r| r.bbox.x2).fold(0.0, f64::max);
    let frame_h = regions.iter().map(|r| r.bbox.y2).fold(0.0, f64::max);
    let mut features = Vec::with_capacity(regions.len() * dim);
    for r in regions {
        let b = &r.bbox;
        let mut row = vec![0.0; dim];
        row[0] = b.x1 / frame_w;
        row[1] = b.y1 / frame_h;
        row[2] = b.x2 / frame_w;
        row[3] = b.y2 / frame_h;
        row[4] = if r.is_subject { 1.0 } else { 0.0 };
        match r.edit_label {
            EditLabel::None => {}
            label => row[4 + label.code() as usize] = 1.0,
        }
        for (d, slot) in row.iter_mut().enumerate().skip(SYNTH_ATTRIBUTE_DIMS) {
            let h = hash::mix(&[seed, r.index as u64, d as u64]);
            *slot = (2.0 * hash::unit_f64(h) - 1.0) * SYNTH_NOISE_SCALE;
        }
        features.extend(row.into_iter().map(|v| f64::from(v as f32)));
    }
    FeatureTable::new("", regions.to_vec(), features, dim)
}
