use std::collections::VecDeque;
use std::sync::Arc;

use glam::{DVec2, DVec3};

use super::BinaryMask;
use crate::tissue::HeightMap;

/// Frames kept per history stack (current plus three previous).
pub const HISTORY_LEN: usize = 4;

#[derive(Debug, Clone, Default)]
pub struct ObservationHistory {
    masks: VecDeque<BinaryMask>,
    tools: VecDeque<[f64; 3]>,
}

impl ObservationHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.masks.clear();
        self.tools.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Controller input. Stacks are newest first. Tool positions are in
/// observation grid units (column, row) with z in meters.
#[derive(Debug, Clone)]
pub struct Observation {
    pub height_map: Arc<HeightMap>,
    pub target_masks: Vec<BinaryMask>,
    pub tool_positions: Vec<[f64; 3]>,
}

impl Observation {
    pub fn target(&self) -> &BinaryMask {
        &self.target_masks[0]
    }

    pub fn tool(&self) -> [f64; 3] {
        self.tool_positions[0]
    }

    /// Current tool tip in world coordinates.
    pub fn tool_world(&self) -> DVec3 {
        let m = self.target();
        let [c, r, z] = self.tool();
        let e = m.extent();
        DVec3::new(e.min_x + c * m.cell_width(), e.min_y + r * m.cell_height(), z)
    }

    /// Flat tensor: height channel, then the four mask channels (row-major,
    /// newest first), then the four tool positions as (col, row, z) triples.
    pub fn to_tensor(&self) -> Vec<f32> {
        let mut out: Vec<f32> = self.height_map.values().iter().map(|v| *v as f32).collect();
        for m in &self.target_masks {
            out.extend(m.bits().iter().map(|b| if *b { 1.0 } else { 0.0 }));
        }
        for t in &self.tool_positions {
            out.extend(t.iter().map(|v| *v as f32));
        }
        out
    }
}

/// Pushes the current frame and returns the stacked observation; an empty
/// history is padded by repeating the current frame.
pub fn build_observation(
    height_map: &Arc<HeightMap>,
    target: &BinaryMask,
    tool_tip: DVec3,
    history: &mut ObservationHistory,
) -> Observation {
    let e = target.extent();
    let grid = DVec2::new((tool_tip.x - e.min_x) / target.cell_width(), (tool_tip.y - e.min_y) / target.cell_height());
    let tool = [grid.x, grid.y, tool_tip.z];
    if history.masks.is_empty() {
        history.masks.extend(std::iter::repeat(target.clone()).take(HISTORY_LEN));
        history.tools.extend(std::iter::repeat(tool).take(HISTORY_LEN));
    } else {
        history.masks.push_front(target.clone());
        history.masks.truncate(HISTORY_LEN);
        history.tools.push_front(tool);
        history.tools.truncate(HISTORY_LEN);
    }
    Observation {
        height_map: Arc::clone(height_map),
        target_masks: history.masks.iter().cloned().collect(),
        tool_positions: history.tools.iter().copied().collect(),
    }
}
