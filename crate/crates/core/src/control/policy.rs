use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};

use crate::fluid::{PhysicsConfig, ToolAction};
use crate::perception::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Euclidean bound on one action.
    pub max_step: f64,
    pub hover_height: f64,
    /// Within this distance of target blood the tool works the nearest cell
    /// instead of heading for the centroid.
    pub local_radius: f64,
    pub engage_radius: f64,
}

impl PolicyConfig {
    pub fn from_physics(physics: &PhysicsConfig) -> Self {
        Self {
            max_step: physics.max_tool_step,
            hover_height: physics.hover_height,
            local_radius: 0.02,
            engage_radius: physics.engage_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub action: ToolAction,
    /// The target mask was empty.
    pub exhausted: bool,
    pub aim: Option<DVec2>,
}

/// Proportional controller over the current target mask.
///
/// Far from the target it heads for the mask centroid (or the target cell
/// closest to it when the centroid is dry); once close it chases
/// the nearest target cell, which walks the tool over the whole pool. Height
/// tracks the surface plus the hover offset.
pub fn scripted_policy(obs: &Observation, config: &PolicyConfig) -> PolicyOutput {
    let mask = obs.target();
    let tip = obs.tool_world();
    let here = tip.truncate();
    let mut sum = DVec2::ZERO;
    let mut nearest: Option<(f64, DVec2)> = None;
    let mut cells = Vec::new();
    for i in mask.set_indices() {
        let c = mask.cell_center(i / mask.cols(), i % mask.cols());
        sum += c;
        cells.push(c);
        let d = c.distance_squared(here);
        if nearest.map_or(true, |(best, _)| d < best) {
            nearest = Some((d, c));
        }
    }
    let Some((nearest_sq, nearest)) = nearest else {
        return PolicyOutput { action: ToolAction::ZERO, exhausted: true, aim: None };
    };
    let centroid = sum / cells.len() as f64;
    // A centroid over dry tissue (ring-shaped or scattered targets) snaps to
    // the closest target cell.
    let anchor = cells
        .iter()
        .copied()
        .min_by(|a, b| a.distance_squared(centroid).total_cmp(&b.distance_squared(centroid)))
        .unwrap_or(centroid);
    let anchor = if anchor.distance(centroid) <= config.engage_radius { centroid } else { anchor };
    let local = nearest_sq.sqrt() < config.local_radius || here.distance(anchor) < config.engage_radius;
    let aim = if local { nearest } else { anchor };
    let z = obs.height_map.sample(tip.x, tip.y) + config.hover_height;
    let mut d = DVec3::new(aim.x - tip.x, aim.y - tip.y, z - tip.z);
    let len = d.length();
    if len > config.max_step {
        d *= config.max_step / len;
    }
    PolicyOutput { action: ToolAction { displacement: d }, exhausted: false, aim: Some(aim) }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::perception::{build_observation, BinaryMask, ObservationHistory};
    use crate::tissue::{generate_surface, sample_heightmap, Extent, HeightMap};

    fn flat() -> Arc<HeightMap> {
        let s = generate_surface(1, 3, 3, Extent::default(), 0.0).unwrap();
        Arc::new(sample_heightmap(&s, 84, 84).unwrap())
    }

    fn blob(center: (usize, usize), half: usize) -> BinaryMask {
        let mut m = BinaryMask::unchecked(84, 84, Extent::default());
        for r in center.0 - half..=center.0 + half {
            for c in center.1 - half..=center.1 + half {
                m.set(r, c, true);
            }
        }
        m
    }

    fn config() -> PolicyConfig {
        PolicyConfig::from_physics(&PhysicsConfig::default())
    }

    #[test]
    fn far_target_moves_at_max_step() {
        let h = flat();
        let m = blob((60, 60), 3);
        let tip = DVec3::new(0.02, 0.02, h.sample(0.02, 0.02) + config().hover_height);
        let obs = build_observation(&h, &m, tip, &mut ObservationHistory::new());
        let out = scripted_policy(&obs, &config());
        assert!((out.action.norm() - config().max_step).abs() < 1e-12);
        let to_centroid = (m.cell_center(60, 60) - tip.truncate()).normalize();
        assert!(out.action.displacement.truncate().normalize().dot(to_centroid) > 0.999);
    }

    #[test]
    fn above_centroid_barely_moves() {
        let h = flat();
        let m = blob((40, 40), 3);
        let c = m.cell_center(40, 40);
        let tip = DVec3::new(c.x, c.y, h.sample(c.x, c.y) + config().hover_height);
        let obs = build_observation(&h, &m, tip, &mut ObservationHistory::new());
        let out = scripted_policy(&obs, &config());
        assert!(out.action.displacement.truncate().length() < 1e-9);
        assert!(out.action.displacement.z.abs() < 1e-9);
    }

    #[test]
    fn empty_mask_signals_exhaustion() {
        let h = flat();
        let m = BinaryMask::unchecked(84, 84, Extent::default());
        let obs = build_observation(&h, &m, DVec3::new(0.1, 0.1, 0.01), &mut ObservationHistory::new());
        let out = scripted_policy(&obs, &config());
        assert!(out.exhausted);
        assert_eq!(out.action, ToolAction::ZERO);
    }
}
