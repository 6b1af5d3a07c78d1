use glam::DVec2;
use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::fluid::SimState;
use crate::harness::scenario::{PerceptionConfig, ToolMarker};

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PoolFlags {
    pub bleeding: bool,
    pub clot: bool,
    pub tool_adjacent: bool,
}

/// One labeled pool. `cells` are row-major indices into the scene grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolObservation {
    pub label: String,
    #[serde(skip)]
    pub cells: Vec<u32>,
    pub area: usize,
    pub centroid: [f64; 2],
    pub bbox: Rect,
    pub bleeding: bool,
    pub clot: bool,
    pub tool_adjacent: bool,
}

impl PoolObservation {
    /// Builds geometry and flags for `cells` (sorted, non-empty) on `grid`'s layout.
    pub fn from_cells(label: String, cells: Vec<u32>, grid: &BinaryMask, flags: PoolFlags) -> Self {
        let (mut sum, mut r0, mut r1, mut c0, mut c1) = (DVec2::ZERO, usize::MAX, 0, usize::MAX, 0);
        for &i in &cells {
            let (r, c) = (i as usize / grid.cols(), i as usize % grid.cols());
            sum += grid.cell_center(r, c);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
        let e = grid.extent();
        let bbox = Rect {
            min_x: e.min_x + c0 as f64 * grid.cell_width(),
            min_y: e.min_y + r0 as f64 * grid.cell_height(),
            max_x: e.min_x + (c1 + 1) as f64 * grid.cell_width(),
            max_y: e.min_y + (r1 + 1) as f64 * grid.cell_height(),
        };
        let centroid = sum / cells.len().max(1) as f64;
        Self {
            label,
            area: cells.len(),
            cells,
            centroid: centroid.into(),
            bbox,
            bleeding: flags.bleeding,
            clot: flags.clot,
            tool_adjacent: flags.tool_adjacent,
        }
    }

    pub fn flags(&self) -> PoolFlags {
        PoolFlags { bleeding: self.bleeding, clot: self.clot, tool_adjacent: self.tool_adjacent }
    }

    pub fn to_mask(&self, grid: &BinaryMask) -> BinaryMask {
        let mut m = grid.empty_like();
        for &i in &self.cells {
            m.set_index(i as usize, true);
        }
        m
    }

    /// Numeric part of a `P<n>` label, for ordering.
    pub fn label_number(&self) -> u32 {
        label_number(&self.label)
    }
}

pub fn label_number(label: &str) -> u32 {
    label.strip_prefix('P').and_then(|s| s.parse().ok()).unwrap_or(u32::MAX)
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

/// 8-connected components of the set cells. Each component lists its cell
/// indices in ascending order; components are ordered by their first cell.
pub fn label_components(mask: &BinaryMask) -> Vec<Vec<u32>> {
    let (rows, cols) = (mask.rows(), mask.cols());
    let mut parent: Vec<u32> = (0..(rows * cols) as u32).collect();
    for r in 0..rows {
        for c in 0..cols {
            if !mask.get(r, c) {
                continue;
            }
            let here = (r * cols + c) as u32;
            let mut join = |rr: usize, cc: usize| {
                if mask.get(rr, cc) {
                    let a = find(&mut parent, here);
                    let b = find(&mut parent, (rr * cols + cc) as u32);
                    if a != b {
                        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                        parent[hi as usize] = lo;
                    }
                }
            };
            if c > 0 {
                join(r, c - 1);
            }
            if r > 0 {
                join(r - 1, c);
                if c > 0 {
                    join(r - 1, c - 1);
                }
                if c + 1 < cols {
                    join(r - 1, c + 1);
                }
            }
        }
    }
    let mut slot = vec![u32::MAX; rows * cols];
    let mut out: Vec<Vec<u32>> = Vec::new();
    for i in mask.set_indices() {
        let root = find(&mut parent, i as u32) as usize;
        if slot[root] == u32::MAX {
            slot[root] = out.len() as u32;
            out.push(Vec::new());
        }
        out[slot[root] as usize].push(i as u32);
    }
    out
}

/// Precomputed footprints of emitters, clots and the distractor tool on the grid.
pub(crate) struct FlagContext {
    emitter_cells: Vec<usize>,
    clot_cells: BinaryMask,
    tool_cells: Option<BinaryMask>,
    dilation: usize,
    adjacency: usize,
}

impl FlagContext {
    pub(crate) fn new(
        grid: &BinaryMask,
        state: &SimState,
        config: &PerceptionConfig,
        marker: Option<&ToolMarker>,
    ) -> Self {
        let emitter_cells = state
            .emitters
            .iter()
            .filter(|e| e.is_active(state.step_index))
            .map(|e| {
                let (r, c) = grid.cell_of(e.source.truncate());
                r * grid.cols() + c
            })
            .collect();
        let mut clot_cells = grid.empty_like();
        for clot in &state.clots {
            stamp(&mut clot_cells, clot.a.truncate(), clot.b.truncate(), clot.radius);
        }
        let tool_cells = marker.map(|m| {
            let mut cells = grid.empty_like();
            stamp(&mut cells, DVec2::from(m.tip), DVec2::from(m.tail), m.half_width);
            cells
        });
        Self { emitter_cells, clot_cells, tool_cells, dilation: config.flag_dilation, adjacency: config.tool_adjacency }
    }

    pub(crate) fn flags(&self, cells: &[u32], grid: &BinaryMask) -> PoolFlags {
        let mut mask = grid.empty_like();
        for &i in cells {
            mask.set_index(i as usize, true);
        }
        let dilated = mask.dilate(self.dilation);
        let bleeding = self.emitter_cells.iter().any(|&i| dilated.get_index(i));
        let clot = self.clot_cells.set_indices().any(|i| dilated.get_index(i));
        let tool_adjacent = self.tool_cells.as_ref().is_some_and(|t| {
            let near = mask.dilate(self.adjacency);
            t.set_indices().any(|i| near.get_index(i))
        });
        PoolFlags { bleeding, clot, tool_adjacent }
    }
}

/// Marks cells whose centers lie within `radius` of segment a-b, plus the
/// cells holding both endpoints.
fn stamp(mask: &mut BinaryMask, a: DVec2, b: DVec2, radius: f64) {
    let ab = b - a;
    let len2 = ab.length_squared();
    for r in 0..mask.rows() {
        for c in 0..mask.cols() {
            let p = mask.cell_center(r, c);
            let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
            if p.distance(a + ab * t) <= radius {
                mask.set(r, c, true);
            }
        }
    }
    for p in [a, b] {
        let (r, c) = mask.cell_of(p);
        mask.set(r, c, true);
    }
}

/// Sorts pools left to right by centroid x, ties by y, and labels them P1..Pk.
pub(crate) fn assign_spatial_labels(pools: &mut [PoolObservation], first: u32) {
    pools.sort_by(|a, b| a.centroid[0].total_cmp(&b.centroid[0]).then(a.centroid[1].total_cmp(&b.centroid[1])));
    for (k, p) in pools.iter_mut().enumerate() {
        p.label = format!("P{}", first + k as u32);
    }
}

/// Connected components of at least `min_pool_cells`, flagged and labeled
/// left to right. Smaller components are treated as spray and dropped.
pub fn detect_pools(
    mask: &BinaryMask,
    state: &SimState,
    config: &PerceptionConfig,
    marker: Option<&ToolMarker>,
) -> Vec<PoolObservation> {
    let ctx = FlagContext::new(mask, state, config, marker);
    let mut pools: Vec<PoolObservation> = label_components(mask)
        .into_iter()
        .filter(|c| c.len() >= config.min_pool_cells)
        .map(|cells| {
            let flags = ctx.flags(&cells, mask);
            PoolObservation::from_cells(String::new(), cells, mask, flags)
        })
        .collect();
    assign_spatial_labels(&mut pools, 1);
    pools
}
