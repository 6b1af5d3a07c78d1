//! Blood masks, pool detection and labeling, the annotated scene image, and
//! the mask sensor that exposes a single target pool to the controller.

mod annotate;
mod observation;
mod pools;
mod target;
mod tracker;

pub use annotate::{annotate_scene, AnnotatedImage, AnnotationSidecar, SidecarPool, SidecarTool};
pub use observation::{build_observation, Observation, ObservationHistory, HISTORY_LEN};
pub use pools::{detect_pools, label_components, label_number, PoolFlags, PoolObservation, Rect};
pub use target::{target_mask, TargetMask};
pub use tracker::{PoolTracker, REATTACH_CELLS, REVIVAL_UPDATES};

use glam::DVec2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fluid::SimState;
use crate::tissue::Extent;

pub const MIN_RESOLUTION: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("mask resolution {rows}x{cols} below the {MIN_RESOLUTION}x{MIN_RESOLUTION} minimum")]
    Resolution { rows: usize, cols: usize },
    #[error("annotation needs at least one pool")]
    NoPools,
    #[error("plan references no surviving pool")]
    PlanExhausted,
    #[error("image encoding failed: {0}")]
    Encode(String),
}

/// Top-down occupancy grid over the workspace. Row index follows +y,
/// column index follows +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMask {
    rows: usize,
    cols: usize,
    extent: Extent,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(rows: usize, cols: usize, extent: Extent) -> Result<Self, PerceptionError> {
        if rows < MIN_RESOLUTION || cols < MIN_RESOLUTION {
            return Err(PerceptionError::Resolution { rows, cols });
        }
        Ok(Self::unchecked(rows, cols, extent))
    }

    /// Grid without the resolution floor, for small test fixtures.
    pub fn unchecked(rows: usize, cols: usize, extent: Extent) -> Self {
        Self { rows, cols, extent, bits: vec![false; rows * cols] }
    }

    pub fn from_bits(rows: usize, cols: usize, extent: Extent, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), rows * cols, "bit count must match resolution");
        Self { rows, cols, extent, bits }
    }

    pub fn empty_like(&self) -> Self {
        Self::unchecked(self.rows, self.cols, self.extent)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    #[inline]
    pub fn get_index(&self, index: usize) -> bool {
        self.bits[index]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.cols + col] = value;
    }

    #[inline]
    pub fn set_index(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn set_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    /// Cell holding a world point; points outside the extent clamp to the border.
    pub fn cell_of(&self, p: DVec2) -> (usize, usize) {
        let u = self.extent.to_unit(p);
        let col = ((u.x * self.cols as f64) as usize).min(self.cols - 1);
        let row = ((u.y * self.rows as f64) as usize).min(self.rows - 1);
        (row, col)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> DVec2 {
        DVec2::new(
            self.extent.min_x + (col as f64 + 0.5) * self.cell_width(),
            self.extent.min_y + (row as f64 + 0.5) * self.cell_height(),
        )
    }

    pub fn cell_width(&self) -> f64 {
        self.extent.width() / self.cols as f64
    }

    pub fn cell_height(&self) -> f64 {
        self.extent.height() / self.rows as f64
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Square (Chebyshev) dilation by `radius` cells.
    pub fn dilate(&self, radius: usize) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        // Separable: a row pass then a column pass.
        let mut horizontal = self.empty_like();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) {
                    let lo = c.saturating_sub(radius);
                    let hi = (c + radius).min(self.cols - 1);
                    for cc in lo..=hi {
                        horizontal.set(r, cc, true);
                    }
                }
            }
        }
        let mut out = self.empty_like();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if horizontal.get(r, c) {
                    let lo = r.saturating_sub(radius);
                    let hi = (r + radius).min(self.rows - 1);
                    for rr in lo..=hi {
                        out.set(rr, c, true);
                    }
                }
            }
        }
        out
    }

    /// Portable bitmap (P1) text for debugging; top row is the highest y.
    pub fn to_pbm(&self) -> String {
        let mut s = format!("P1\n{} {}\n", self.cols, self.rows);
        for r in (0..self.rows).rev() {
            let line: Vec<&str> = (0..self.cols).map(|c| if self.get(r, c) { "1" } else { "0" }).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    /// Block-wise OR down to at most `max_edge` cells per side.
    pub fn downsample(&self, max_edge: usize) -> BinaryMask {
        let factor = self.rows.max(self.cols).div_ceil(max_edge.max(1)).max(1);
        let rows = self.rows.div_ceil(factor);
        let cols = self.cols.div_ceil(factor);
        let mut out = BinaryMask::unchecked(rows, cols, self.extent);
        for i in self.set_indices() {
            out.set((i / self.cols) / factor, (i % self.cols) / factor, true);
        }
        out
    }

    /// Rows of '0'/'1' characters, first row lowest y.
    pub fn to_rows(&self) -> Vec<String> {
        (0..self.rows).map(|r| (0..self.cols).map(|c| if self.get(r, c) { '1' } else { '0' }).collect()).collect()
    }
}

/// Orthographic top-down projection of every active particle center.
pub fn rasterize_mask(
    state: &SimState,
    rows: usize,
    cols: usize,
    extent: Extent,
) -> Result<BinaryMask, PerceptionError> {
    let mut mask = BinaryMask::new(rows, cols, extent)?;
    for p in state.active_positions() {
        let (r, c) = mask.cell_of(p.truncate());
        mask.set(r, c, true);
    }
    Ok(mask)
}
