//! Region validation, descending-area ordering and mask rasterization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutError {
    #[error("degenerate region {0:?}")]
    DegenerateRegion([f64; 4]),
    #[error("non-finite region coordinates {0:?}")]
    NonFinite([f64; 4]),
    #[error("{regions} regions but {prompts} prompts")]
    LengthMismatch { regions: usize, prompts: usize },
    #[error("mask shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
}

/// Normalized box, top-left origin. Serialized as `[l, t, r, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Region {
    pub x_left: f64,
    pub y_top: f64,
    pub x_right: f64,
    pub y_bottom: f64,
}

impl Region {
    pub fn area(&self) -> f64 {
        (self.x_right - self.x_left) * (self.y_bottom - self.y_top)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_left, self.y_top, self.x_right, self.y_bottom]
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_left + self.x_right) / 2.0, (self.y_top + self.y_bottom) / 2.0)
    }
}

impl From<Region> for [f64; 4] {
    fn from(r: Region) -> Self {
        r.to_array()
    }
}

impl TryFrom<[f64; 4]> for Region {
    type Error = LayoutError;

    /// Strict: the coordinates must already be inside `[0, 1]`.
    fn try_from(raw: [f64; 4]) -> Result<Self, Self::Error> {
        let r = validate_and_normalize(raw)?;
        if r.to_array() != raw {
            return Err(LayoutError::DegenerateRegion(raw));
        }
        Ok(r)
    }
}

/// Clamps into `[0, 1]` and rejects inverted or zero-area boxes.
pub fn validate_and_normalize(raw: [f64; 4]) -> Result<Region, LayoutError> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(LayoutError::NonFinite(raw));
    }
    let [l, t, r, b] = raw.map(|v| v.clamp(0.0, 1.0));
    if l >= r || t >= b {
        return Err(LayoutError::DegenerateRegion(raw));
    }
    Ok(Region { x_left: l, y_top: t, x_right: r, y_bottom: b })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocatedPrompt {
    pub entity: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub entity: String,
    pub entity_index: usize,
    #[serde(rename = "box")]
    pub region: Region,
    pub prompt: String,
}

/// Entries sorted by area, largest first; equal areas keep entity order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayoutPlan {
    pub entries: Vec<LayoutEntry>,
}

impl LayoutPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry_for(&self, entity_index: usize) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.entity_index == entity_index)
    }

    /// Re-sorts in place. Stable sort on descending area, then entity index.
    pub fn resort(&mut self) {
        self.entries.sort_by(|a, b| {
            b.region
                .area()
                .total_cmp(&a.region.area())
                .then(a.entity_index.cmp(&b.entity_index))
        });
    }
}

/// Builds a plan from index-aligned regions and prompts.
pub fn order_plan(regions: &[Region], prompts: &[LocatedPrompt]) -> Result<LayoutPlan, LayoutError> {
    if regions.len() != prompts.len() {
        return Err(LayoutError::LengthMismatch { regions: regions.len(), prompts: prompts.len() });
    }
    let mut plan = LayoutPlan {
        entries: regions
            .iter()
            .zip(prompts)
            .enumerate()
            .map(|(i, (region, p))| LayoutEntry {
                entity: p.entity.clone(),
                entity_index: i,
                region: *region,
                prompt: p.prompt.clone(),
            })
            .collect(),
    };
    plan.resort();
    Ok(plan)
}

/// Row-major `h x w` binary grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    pub h: usize,
    pub w: usize,
    pub cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn filled(h: usize, w: usize, value: bool) -> Self {
        Self { h, w, cells: vec![value; h * w] }
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.w + c]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub grid: BinaryGrid,
    pub region: Region,
}

/// A cell is inside when its center lies in the half-open box
/// `[x_left, x_right) x [y_top, y_bottom)`. When no center qualifies the
/// single cell whose center is nearest the box center is set (first in
/// row-major order on ties).
pub fn rasterize_mask(region: &Region, h: usize, w: usize) -> RegionMask {
    assert!(h >= 1 && w >= 1, "mask resolution must be at least 1x1");
    let mut grid = BinaryGrid::filled(h, w, false);
    for r in 0..h {
        let cy = (r as f64 + 0.5) / h as f64;
        if cy < region.y_top || cy >= region.y_bottom {
            continue;
        }
        for c in 0..w {
            let cx = (c as f64 + 0.5) / w as f64;
            if cx >= region.x_left && cx < region.x_right {
                grid.cells[r * w + c] = true;
            }
        }
    }
    if grid.count() == 0 {
        let (bx, by) = region.center();
        let mut best = (f64::INFINITY, 0);
        for r in 0..h {
            for c in 0..w {
                let dx = (c as f64 + 0.5) / w as f64 - bx;
                let dy = (r as f64 + 0.5) / h as f64 - by;
                let d = dx * dx + dy * dy;
                if d < best.0 {
                    best = (d, r * w + c);
                }
            }
        }
        grid.cells[best.1] = true;
    }
    RegionMask { grid, region: *region }
}

/// Complement of the union of `masks`.
pub fn background_mask(masks: &[RegionMask], h: usize, w: usize) -> Result<BinaryGrid, LayoutError> {
    let mut out = BinaryGrid::filled(h, w, true);
    for m in masks {
        if (m.grid.h, m.grid.w) != (h, w) {
            return Err(LayoutError::ShapeMismatch { expected: (h, w), got: (m.grid.h, m.grid.w) });
        }
        for (o, &set) in out.cells.iter_mut().zip(&m.grid.cells) {
            if set {
                *o = false;
            }
        }
    }
    Ok(out)
}
