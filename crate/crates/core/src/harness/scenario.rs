//! Scenario configuration for the four environments and its seeded generator.

use std::path::Path;

use glam::DVec2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fluid::PhysicsConfig;
use crate::tissue::Extent;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario schema version {found} not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("scenario file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario file {path}: {detail}")]
    Format { path: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub degree_n: usize,
    pub degree_m: usize,
    pub amplitude: f64,
    pub extent: Extent,
}

impl Default for SurfaceSpec {
    fn default() -> Self {
        Self { degree_n: 4, degree_m: 4, amplitude: 0.006, extent: Extent::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    /// Spawn disc center (x, y) in meters.
    pub center: [f64; 2],
    /// Spawn disc radius in meters.
    pub radius: f64,
    pub particles: usize,
    /// Stacked layers for this pool; falls back to the scenario default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterSpec {
    /// Index into `pools`.
    pub pool: usize,
    pub source: [f64; 2],
    pub rate: usize,
    pub start_step: u64,
    pub end_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClotSpec {
    /// Pool the clot was generated next to.
    pub pool: usize,
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub radius: f64,
}

/// Static surgical instrument drawn into the scene; it has no physics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolMarker {
    /// Pool the marker was placed beside.
    pub pool: usize,
    pub tip: [f64; 2],
    pub tail: [f64; 2],
    pub half_width: f64,
}

impl ToolMarker {
    pub fn contains(&self, p: DVec2) -> bool {
        let a = DVec2::from(self.tip);
        let ab = DVec2::from(self.tail) - a;
        let len2 = ab.length_squared();
        let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        p.distance(a + ab * t) <= self.half_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    /// Square observation grid edge, in cells.
    pub resolution: usize,
    pub min_pool_cells: usize,
    /// Dilation (cells) used when attributing emitters and clots to pools.
    pub flag_dilation: usize,
    /// Distance (cells) within which a distractor tool marks a pool.
    pub tool_adjacency: usize,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self { resolution: 84, min_pool_cells: 5, flag_dilation: 2, tool_adjacency: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    /// Environment 1..=4.
    pub environment: u8,
    pub seed: u64,
    /// Initial blood budget shared by the pools.
    pub total_particles: usize,
    /// Extra capacity reserved for bleeding emission.
    pub reserve_particles: usize,
    /// Stacked particle layers used when spawning a pool.
    pub pool_layers: usize,
    pub pools: Vec<PoolSpec>,
    #[serde(default)]
    pub emitters: Vec<EmitterSpec>,
    #[serde(default)]
    pub clots: Vec<ClotSpec>,
    #[serde(default)]
    pub distractor_tool: Option<ToolMarker>,
    pub tool_start: [f64; 2],
    pub surface: SurfaceSpec,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub perception: PerceptionConfig,
    /// Seconds per step.
    pub dt: f64,
    pub step_budget: usize,
    /// Warm-up steps run before t = 0 with the tool idle.
    pub settle_steps: usize,
}

/// Knobs for [`generate_scenario_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOptions {
    pub pool_count: usize,
    pub total_particles: usize,
    pub distractor_tool: bool,
    pub emitter_rate: usize,
    pub emitter_interval: (u64, u64),
    pub step_budget: usize,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            pool_count: 4,
            total_particles: 4000,
            distractor_tool: false,
            emitter_rate: 2,
            emitter_interval: (0, 250),
            step_budget: 3000,
        }
    }
}

impl ScenarioConfig {
    pub fn capacity(&self) -> usize {
        self.total_particles + self.reserve_particles
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(ScenarioError::Version { found: self.schema_version, expected: SCENARIO_SCHEMA_VERSION });
        }
        if !(1..=4).contains(&self.environment) {
            return invalid(format!("environment {} not in 1..=4", self.environment));
        }
        if self.pools.is_empty() {
            return invalid("at least one pool is required".into());
        }
        let allocated: usize = self.pools.iter().map(|p| p.particles).sum();
        if allocated > self.total_particles {
            return invalid(format!("pools allocate {allocated} particles, budget is {}", self.total_particles));
        }
        if self.pool_layers == 0 {
            return invalid("pool_layers must be at least 1".into());
        }
        if self.pools.iter().any(|p| p.layers == Some(0)) {
            return invalid("pool layers must be at least 1".into());
        }
        if !(self.dt > 0.0) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        let (e, c) = (self.emitters.len(), self.clots.len());
        let shape_ok = match self.environment {
            1 => e == 0 && c == 0,
            2 => e == 1 && c == 0,
            3 => e == 0 && c == 1,
            _ => e == 1 && c == 1 && self.emitters[0].pool != self.clots[0].pool,
        };
        if !shape_ok {
            return invalid(format!("environment {} does not allow {e} emitter(s) and {c} clot(s)", self.environment));
        }
        for em in &self.emitters {
            if em.pool >= self.pools.len() {
                return invalid(format!("emitter references pool {}", em.pool));
            }
        }
        for cl in &self.clots {
            if cl.pool >= self.pools.len() {
                return invalid(format!("clot references pool {}", cl.pool));
            }
        }
        Ok(())
    }

    /// Writes the scenario as a TOML document.
    pub fn save(&self, path: &Path) -> Result<(), ScenarioError> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| ScenarioError::Format { path: path.display().to_string(), detail: e.to_string() })?;
        std::fs::write(path, text).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        let cfg: ScenarioConfig = toml::from_str(&text)
            .map_err(|e| ScenarioError::Format { path: path.display().to_string(), detail: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn generate_scenario(env_id: u8, seed: u64) -> Result<ScenarioConfig, ScenarioError> {
    generate_scenario_with(env_id, seed, &ScenarioOptions::default())
}

/// Seeded scene layout: disjoint pools of varied size, then environment
/// specific emitter and clot placement on distinct, uniformly chosen pools.
pub fn generate_scenario_with(env_id: u8, seed: u64, opts: &ScenarioOptions) -> Result<ScenarioConfig, ScenarioError> {
    if !(1..=4).contains(&env_id) {
        return Err(ScenarioError::Invalid(format!("environment {env_id} not in 1..=4")));
    }
    if opts.pool_count == 0 {
        return Err(ScenarioError::Invalid("pool_count must be at least 1".into()));
    }
    // Stream per environment so the same seed gives unrelated layouts across envs.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(env_id) << 56) ^ 0x5eed_b100d);
    let surface = SurfaceSpec::default();
    let physics = PhysicsConfig::default();
    let layers = 2;
    let extent = surface.extent;

    let pools = place_pools(&mut rng, opts, extent, physics.diameter(), layers);

    let mut order: Vec<usize> = (0..pools.len()).collect();
    order.shuffle(&mut rng);
    let (bleeding_pool, clot_pool) = match env_id {
        2 => (Some(order[0]), None),
        3 => (None, Some(order[0])),
        4 if pools.len() >= 2 => (Some(order[0]), Some(order[1])),
        4 => return Err(ScenarioError::Invalid("environment 4 needs at least two pools".into())),
        _ => (None, None),
    };

    let emitters = bleeding_pool
        .map(|p| {
            vec![EmitterSpec {
                pool: p,
                source: pools[p].center,
                rate: opts.emitter_rate,
                start_step: opts.emitter_interval.0,
                end_step: opts.emitter_interval.1,
            }]
        })
        .unwrap_or_default();

    let clots = clot_pool
        .map(|p| {
            let pool = &pools[p];
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let dir = DVec2::from_angle(angle);
            let center = DVec2::from(pool.center) + dir * (0.55 * pool.radius);
            let along = dir.perp() * 0.005;
            vec![ClotSpec { pool: p, a: (center - along).into(), b: (center + along).into(), radius: 0.0025 }]
        })
        .unwrap_or_default();

    let distractor_tool = if opts.distractor_tool {
        let p = *order.last().expect("at least one pool");
        Some(place_marker(&mut rng, &pools, p, extent))
    } else {
        None
    };

    let cfg = ScenarioConfig {
        schema_version: SCENARIO_SCHEMA_VERSION,
        environment: env_id,
        seed,
        total_particles: opts.total_particles,
        reserve_particles: 600,
        pool_layers: layers,
        pools,
        emitters,
        clots,
        distractor_tool,
        tool_start: extent.center().into(),
        surface,
        physics,
        perception: PerceptionConfig::default(),
        dt: 0.02,
        step_budget: opts.step_budget,
        settle_steps: 200,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Disc radius holding `particles` spread over `layers` hexagonal layers.
pub fn pool_radius(particles: usize, layers: usize, spacing: f64) -> f64 {
    let per_layer = (particles as f64 / layers as f64).ceil();
    (per_layer * 3f64.sqrt() / 2.0 * spacing * spacing / std::f64::consts::PI).sqrt() + spacing
}

fn place_pools(
    rng: &mut ChaCha8Rng,
    opts: &ScenarioOptions,
    extent: Extent,
    spacing: f64,
    layers: usize,
) -> Vec<PoolSpec> {
    let gap = 0.025;
    let margin = 0.006;
    loop {
        let weights: Vec<f64> = (0..opts.pool_count).map(|_| rng.gen_range(0.4..1.6)).collect();
        let sum: f64 = weights.iter().sum();
        let mut counts: Vec<usize> =
            weights.iter().map(|w| (w / sum * opts.total_particles as f64).floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let largest = (0..counts.len()).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
        counts[largest] += opts.total_particles - assigned;

        let mean = opts.total_particles as f64 / counts.len() as f64;
        let mut pools: Vec<PoolSpec> = Vec::new();
        let mut ok = true;
        for &n in &counts {
            // Bigger pools collect deeper, not only wider.
            let depth = ((layers as f64 * n as f64 / mean).round() as usize).clamp(1, 2 * layers);
            let radius = pool_radius(n, depth, spacing);
            let lo = DVec2::new(extent.min_x, extent.min_y) + radius + margin;
            let hi = DVec2::new(extent.max_x, extent.max_y) - radius - margin;
            if lo.x >= hi.x || lo.y >= hi.y {
                ok = false;
                break;
            }
            let placed = (0..2000).find_map(|_| {
                let c = DVec2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
                let clear = pools.iter().all(|q| c.distance(DVec2::from(q.center)) >= radius + q.radius + gap);
                clear.then_some(c)
            });
            match placed {
                Some(c) => pools.push(PoolSpec { center: c.into(), radius, particles: n, layers: Some(depth) }),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            // Scenario pool i then lines up with detector label P{i+1} at t = 0.
            pools.sort_by(|a, b| a.center[0].total_cmp(&b.center[0]).then(a.center[1].total_cmp(&b.center[1])));
            return pools;
        }
    }
}

fn place_marker(rng: &mut ChaCha8Rng, pools: &[PoolSpec], pool: usize, extent: Extent) -> ToolMarker {
    let target = &pools[pool];
    let c = DVec2::from(target.center);
    let start = rng.gen_range(0..8);
    let half_width = 0.002;
    let length = 0.04;
    let mut fallback = None;
    for k in 0..8 {
        let dir = DVec2::from_angle((start + k) as f64 * std::f64::consts::FRAC_PI_4);
        let tip = c + dir * (target.radius + 0.004);
        let tail = extent.clamp(tip + dir * length);
        let marker = ToolMarker { pool, tip: tip.into(), tail: tail.into(), half_width };
        fallback.get_or_insert_with(|| marker.clone());
        let clear = pools.iter().enumerate().filter(|(i, _)| *i != pool).all(|(_, q)| {
            (0..=10).all(|s| {
                let p = tip.lerp(tail, s as f64 / 10.0);
                p.distance(DVec2::from(q.center)) > q.radius + 0.01
            })
        });
        if clear && extent.contains(tip) {
            return marker;
        }
    }
    fallback.expect("eight candidate directions")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_shapes() {
        for seed in 0..20 {
            let s1 = generate_scenario(1, seed).unwrap();
            assert!(s1.emitters.is_empty() && s1.clots.is_empty());
            let s2 = generate_scenario(2, seed).unwrap();
            assert_eq!((s2.emitters.len(), s2.clots.len()), (1, 0));
            let s3 = generate_scenario(3, seed).unwrap();
            assert_eq!((s3.emitters.len(), s3.clots.len()), (0, 1));
            let s4 = generate_scenario(4, seed).unwrap();
            assert_ne!(s4.emitters[0].pool, s4.clots[0].pool);
            for s in [&s1, &s2, &s3, &s4] {
                assert_eq!(s.pools.len(), 4);
                assert_eq!(s.pools.iter().map(|p| p.particles).sum::<usize>(), 4000);
            }
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_scenario(3, 11).unwrap(), generate_scenario(3, 11).unwrap());
        assert_ne!(generate_scenario(3, 11).unwrap(), generate_scenario(3, 12).unwrap());
    }

    #[test]
    fn pools_disjoint_and_sorted() {
        for seed in 0..30 {
            let s = generate_scenario(1, seed).unwrap();
            for (i, a) in s.pools.iter().enumerate() {
                for b in &s.pools[i + 1..] {
                    let d = DVec2::from(a.center).distance(DVec2::from(b.center));
                    assert!(d > a.radius + b.radius);
                    assert!(a.center[0] <= b.center[0]);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_env() {
        assert!(generate_scenario(0, 1).is_err());
        assert!(generate_scenario(5, 1).is_err());
        let mut s = generate_scenario(1, 1).unwrap();
        s.pools[0].particles += 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.toml");
        let mut opts = ScenarioOptions::default();
        opts.distractor_tool = true;
        let s = generate_scenario_with(4, 8, &opts).unwrap();
        s.save(&path).unwrap();
        assert_eq!(ScenarioConfig::load(&path).unwrap(), s);
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut s = generate_scenario(1, 2).unwrap();
        s.schema_version = 99;
        assert!(matches!(s.validate(), Err(ScenarioError::Version { .. })));
    }
}
