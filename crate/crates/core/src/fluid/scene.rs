use std::sync::Arc;

use glam::{DVec2, DVec3};
use rand::Rng;

use super::{BleedingEmitter, Capsule, FluidError, SimState, Simulation, ToolPose};
use crate::harness::scenario::ScenarioConfig;
use crate::tissue::TissueSurface;

/// Spawns every pool as stacked hexagonal layers inside its disc, places
/// emitters and clots, and settles the scene so pools are at rest at t = 0.
pub fn init_scene(config: &ScenarioConfig, surface: Arc<TissueSurface>) -> Result<Simulation, FluidError> {
    if config.pools.is_empty() {
        return Err(FluidError::Scenario("scene needs at least one pool".into()));
    }
    let allocated: usize = config.pools.iter().map(|p| p.particles).sum();
    if allocated > config.total_particles {
        return Err(FluidError::Scenario(format!(
            "pools allocate {allocated} particles, budget is {}",
            config.total_particles
        )));
    }
    for (i, a) in config.pools.iter().enumerate() {
        for (j, b) in config.pools.iter().enumerate().skip(i + 1) {
            let d = DVec2::from(a.center).distance(DVec2::from(b.center));
            if d < a.radius + b.radius {
                return Err(FluidError::Scenario(format!("pool spawn regions {i} and {j} overlap")));
            }
        }
    }

    let physics = config.physics.clone();
    let r = physics.particle_radius;
    let start = DVec2::from(config.tool_start);
    let tool = ToolPose {
        tip: DVec3::new(start.x, start.y, surface.height_at(start.x, start.y) + physics.hover_height),
        suction: false,
    };
    let mut state = SimState::new(config.capacity(), tool, config.seed);

    for (index, pool) in config.pools.iter().enumerate() {
        let points = pool_points(
            DVec2::from(pool.center),
            pool.particles,
            pool.layers.unwrap_or(config.pool_layers),
            physics.diameter(),
        );
        for (xy, layer) in points {
            let jitter = DVec2::new(state.rng.gen_range(-1.0..=1.0), state.rng.gen_range(-1.0..=1.0)) * (0.05 * r);
            let p = xy + jitter;
            let z = surface.height_at(p.x, p.y) + r + layer as f64 * physics.diameter() * 0.82;
            state.spawn(DVec3::new(p.x, p.y, z), index as u16);
        }
    }
    state.ledger.initial = state.active_count();

    for e in &config.emitters {
        let s = DVec2::from(e.source);
        state.emitters.push(BleedingEmitter {
            source: DVec3::new(s.x, s.y, surface.height_at(s.x, s.y) + r),
            rate: e.rate,
            start_step: e.start_step,
            end_step: e.end_step,
            pool: e.pool as u16,
        });
    }
    for c in &config.clots {
        let (a, b) = (DVec2::from(c.a), DVec2::from(c.b));
        state.clots.push(Capsule {
            a: DVec3::new(a.x, a.y, surface.height_at(a.x, a.y) + c.radius),
            b: DVec3::new(b.x, b.y, surface.height_at(b.x, b.y) + c.radius),
            radius: c.radius,
        });
    }

    let mut sim = Simulation::new(state, surface, physics);
    settle(&mut sim, config.settle_steps, config.dt);
    Ok(sim)
}

/// Runs warm-up physics with the tool idle; the episode clock stays at 0.
pub fn settle(sim: &mut Simulation, steps: usize, dt: f64) {
    let suction = sim.state.tool.suction;
    sim.state.tool.suction = false;
    for _ in 0..steps {
        sim.relax_only(dt);
    }
    sim.state.tool.suction = suction;
    sim.state.velocities.iter_mut().for_each(|v| *v = DVec3::ZERO);
}

/// Lattice sites for `count` particles: per layer, the hexagonal sites nearest
/// the center, with odd layers offset into the hollows of the one below.
fn pool_points(center: DVec2, count: usize, layers: usize, spacing: f64) -> Vec<(DVec2, usize)> {
    let per_layer = count.div_ceil(layers);
    let mut out = Vec::with_capacity(count);
    let row_h = spacing * 3f64.sqrt() / 2.0;
    let mut remaining = count;
    for layer in 0..layers {
        let take = per_layer.min(remaining);
        if take == 0 {
            break;
        }
        let offset = if layer % 2 == 1 { DVec2::new(spacing * 0.5, row_h / 3.0) } else { DVec2::ZERO };
        let reach = ((take as f64 / 0.9).sqrt() as i64) + 3;
        let mut sites: Vec<(f64, i64, i64, DVec2)> = Vec::new();
        for row in -reach..=reach {
            for col in -reach..=reach {
                let shift = if row.rem_euclid(2) == 1 { spacing * 0.5 } else { 0.0 };
                let p = DVec2::new(col as f64 * spacing + shift, row as f64 * row_h) + offset;
                sites.push((p.length_squared(), row, col, center + p));
            }
        }
        sites.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        out.extend(sites.into_iter().take(take).map(|s| (s.3, layer)));
        remaining -= take;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::{generate_scenario, pool_radius};
    use crate::tissue::generate_surface;

    fn surface_for(cfg: &ScenarioConfig) -> Arc<TissueSurface> {
        let s = &cfg.surface;
        Arc::new(generate_surface(cfg.seed, s.degree_n, s.degree_m, s.extent, s.amplitude).unwrap())
    }

    #[test]
    fn pool_points_fit_disc() {
        let c = DVec2::new(0.1, 0.1);
        let pts = pool_points(c, 1001, 2, 0.002);
        assert_eq!(pts.len(), 1001);
        let r = pool_radius(1001, 2, 0.002);
        assert!(pts.iter().all(|(p, _)| p.distance(c) <= r));
        assert_eq!(pts.iter().filter(|(_, l)| *l == 1).count(), 500);
    }

    #[test]
    fn four_pools_have_full_budget() {
        let cfg = generate_scenario(1, 3).unwrap();
        let sim = init_scene(&cfg, surface_for(&cfg)).unwrap();
        assert_eq!(sim.state.active_count(), 4000);
        assert_eq!(sim.state.step_index, 0);
        assert_eq!(sim.state.capacity(), 4600);
    }

    #[test]
    fn overlapping_pools_rejected() {
        let mut cfg = generate_scenario(1, 3).unwrap();
        cfg.pools[1].center = cfg.pools[0].center;
        assert!(matches!(init_scene(&cfg, surface_for(&cfg)), Err(FluidError::Scenario(_))));
    }

    #[test]
    fn single_pool_scene() {
        let mut cfg = generate_scenario(1, 5).unwrap();
        cfg.pools.truncate(1);
        let n = cfg.pools[0].particles;
        let sim = init_scene(&cfg, surface_for(&cfg)).unwrap();
        assert_eq!(sim.state.active_count(), n);
        assert!(sim.state.emitters.is_empty() && sim.state.clots.is_empty());
    }

    #[test]
    fn deterministic_particles() {
        let cfg = generate_scenario(2, 7).unwrap();
        let a = init_scene(&cfg, surface_for(&cfg)).unwrap();
        let b = init_scene(&cfg, surface_for(&cfg)).unwrap();
        let bits = |s: &Simulation| -> Vec<u64> {
            s.state.positions.iter().flat_map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }
}
