//! Box overlap measures used to decide whether two regions are linked.
//!
//! Two measures are available. [`iou`] is standard intersection-over-union.
//! [`overlap_extent_ratio`] is the ratio of horizontal to vertical
//! intersection extent; it is not bounded to `[0, 1]` and is kept only for
//! comparison runs.

use serde::{Deserialize, Serialize};

use crate::data::BBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    #[default]
    StandardIou,
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlapConfig {
    pub mode: OverlapMode,
    pub threshold: f64,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        OverlapConfig {
            mode: OverlapMode::StandardIou,
            threshold: 0.1,
        }
    }
}

impl OverlapConfig {
    pub fn new(mode: OverlapMode, threshold: f64) -> Result<Self> {
        let cfg = OverlapConfig { mode, threshold };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "overlap threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

fn intersection_extent(a: &BBox, b: &BBox) -> (f64, f64) {
    (a.x2.min(b.x2) - a.x1.max(b.x1), a.y2.min(b.y2) - a.y1.max(b.y1))
}

pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let (w, h) = intersection_extent(a, b);
    w.max(0.0) * h.max(0.0)
}

/// Intersection-over-union of two valid boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// The literal horizontal-over-vertical intersection extent ratio. Returns
/// `None` when the vertical extent is exactly zero.
pub fn overlap_extent_ratio(a: &BBox, b: &BBox) -> Option<f64> {
    let (w, h) = intersection_extent(a, b);
    if h == 0.0 {
        None
    } else {
        Some(w / h)
    }
}

/// The configured overlap measure. Degenerate literal evaluations fall back
/// to IoU.
pub fn overlap_value(a: &BBox, b: &BBox, cfg: &OverlapConfig) -> f64 {
    match cfg.mode {
        OverlapMode::StandardIou => iou(a, b),
        OverlapMode::PaperLiteral => overlap_extent_ratio(a, b).unwrap_or_else(|| iou(a, b)),
    }
}

/// Whether two boxes overlap at or above the configured threshold.
pub fn overlaps(a: &BBox, b: &BBox, cfg: &OverlapConfig) -> bool {
    overlap_value(a, b, cfg) >= cfg.threshold
}
