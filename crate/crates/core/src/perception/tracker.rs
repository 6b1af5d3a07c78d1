use super::pools::{assign_spatial_labels, label_components, FlagContext};
use super::{BinaryMask, PoolObservation};
use crate::fluid::SimState;
use crate::harness::scenario::{PerceptionConfig, ToolMarker};

/// Keeps pool labels stable across steps.
///
/// Each connected component joins the previous pool it overlaps most (ties
/// go to the lower label), so fragments of a split pool keep its label and a
/// merged pool keeps the label with the larger overlap. A tracked pool lives
/// on while any of its cells remain; only unmatched components reaching
/// `min_pool_cells` become new pools. Components that match nothing are
/// first retried against previous masks grown by one cell, which absorbs
/// droplets that drift off a pool edge, then against masks grown by
/// [`REATTACH_CELLS`] including pools that vanished within the last
/// [`REVIVAL_UPDATES`] updates. A vanished pool matched this way comes back
/// under its old label.
#[derive(Debug, Clone)]
pub struct PoolTracker {
    config: PerceptionConfig,
    previous: Vec<(String, Vec<u32>)>,
    /// Vanished pools: label, last cells, updates left.
    recent: Vec<(String, Vec<u32>, usize)>,
    next_label: u32,
    started: bool,
}

impl PoolTracker {
    pub fn new(config: PerceptionConfig) -> Self {
        Self { config, previous: Vec::new(), recent: Vec::new(), next_label: 1, started: false }
    }

    pub fn reset(&mut self) {
        self.previous.clear();
        self.recent.clear();
        self.next_label = 1;
        self.started = false;
    }

    /// Labels every pool ever created, in creation order.
    pub fn labels_issued(&self) -> u32 {
        self.next_label - 1
    }

    pub fn update(&mut self, mask: &BinaryMask, state: &SimState, marker: Option<&ToolMarker>) -> Vec<PoolObservation> {
        let ctx = FlagContext::new(mask, state, &self.config, marker);
        let components = label_components(mask);
        let min = self.config.min_pool_cells;

        let alive = self.previous.len();
        let known: Vec<(&String, &Vec<u32>)> =
            self.previous.iter().map(|(l, c)| (l, c)).chain(self.recent.iter().map(|(l, c, _)| (l, c))).collect();
        let mut grouped: Vec<Vec<u32>> = vec![Vec::new(); known.len()];
        let mut fresh: Vec<Vec<u32>> = Vec::new();
        if self.started && !known.is_empty() {
            let raw = owner_grid(mask, &known[..alive], 0);
            let grown = owner_grid(mask, &known[..alive], 1);
            let wide = owner_grid(mask, &known, REATTACH_CELLS);
            for comp in components {
                let owner = best_owner(&comp, &raw, alive)
                    .or_else(|| best_owner(&comp, &grown, alive))
                    .or_else(|| best_owner(&comp, &wide, known.len()));
                match owner {
                    Some(k) => grouped[k].extend_from_slice(&comp),
                    None if comp.len() >= min => fresh.push(comp),
                    None => {}
                }
            }
        } else {
            fresh = components.into_iter().filter(|c| c.len() >= min).collect();
        }

        let mut pools = Vec::new();
        let mut recent = Vec::new();
        for (k, ((label, last), mut cells)) in known.iter().zip(grouped).enumerate() {
            if cells.is_empty() {
                let ttl = if k < alive { REVIVAL_UPDATES } else { self.recent[k - alive].2.saturating_sub(1) };
                if ttl > 0 {
                    recent.push(((*label).clone(), (*last).clone(), ttl));
                }
                continue;
            }
            cells.sort_unstable();
            let flags = ctx.flags(&cells, mask);
            pools.push(PoolObservation::from_cells((*label).clone(), cells, mask, flags));
        }
        let mut created: Vec<PoolObservation> = fresh
            .into_iter()
            .map(|cells| {
                let flags = ctx.flags(&cells, mask);
                PoolObservation::from_cells(String::new(), cells, mask, flags)
            })
            .collect();
        assign_spatial_labels(&mut created, self.next_label);
        self.next_label += created.len() as u32;
        pools.extend(created);
        pools.sort_by_key(|p| p.label_number());

        self.previous = pools.iter().map(|p| (p.label.clone(), p.cells.clone())).collect();
        self.recent = recent;
        self.started = true;
        pools
    }
}

/// Dilation (cells) for the last re-attachment pass.
pub const REATTACH_CELLS: usize = 3;
/// Updates a vanished pool's label stays claimable.
pub const REVIVAL_UPDATES: usize = 50;

/// Per cell, 1 + index of the pool covering it (0 for none), with masks grown
/// by `grow` cells; earlier pools win overlaps.
fn owner_grid(mask: &BinaryMask, pools: &[(&String, &Vec<u32>)], grow: usize) -> Vec<u32> {
    let mut owner = vec![0u32; mask.rows() * mask.cols()];
    for (k, (_, cells)) in pools.iter().enumerate() {
        let mut m = mask.empty_like();
        for &i in cells.iter() {
            m.set_index(i as usize, true);
        }
        for i in m.dilate(grow).set_indices() {
            if owner[i] == 0 {
                owner[i] = k as u32 + 1;
            }
        }
    }
    owner
}

fn best_owner(comp: &[u32], owner: &[u32], pools: usize) -> Option<usize> {
    let mut counts = vec![0usize; pools];
    for &i in comp {
        let o = owner[i as usize];
        if o > 0 {
            counts[o as usize - 1] += 1;
        }
    }
    // Previous pools are kept sorted by label number, so the first maximum is the lowest label.
    let (k, &n) = counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
    (n > 0).then_some(k)
}
