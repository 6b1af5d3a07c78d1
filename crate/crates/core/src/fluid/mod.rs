//! Reduced position-based blood model.
//!
//! Each step follows a fixed order: move the tool, emit bleeding, apply
//! gravity and suction, relax pairwise distance constraints over a neighbor
//! grid, project out of the tissue and clot capsules, capture particles at the
//! tool, then advance the clock.

mod grid;
mod scene;

pub use grid::NeighborGrid;
pub use scene::{init_scene, settle};

use std::sync::Arc;

use glam::{DVec2, DVec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tissue::{sample_heightmap, HeightMap, HeightQuery, TissueSurface};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluidError {
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("simulation fault at step {step}: {detail}")]
    SimulationFault { step: u64, detail: String },
}

/// Physics constants. Lengths in meters, accelerations in m/s² (unit mass).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsConfig {
    pub particle_radius: f64,
    pub gravity: f64,
    pub relax_iterations: usize,
    /// Attraction band beyond contact, as a multiple of the particle diameter.
    pub cohesion_range: f64,
    pub cohesion: f64,
    /// Fraction of velocity removed per step.
    pub damping: f64,
    /// Fraction of tangential motion removed while touching the tissue.
    pub surface_friction: f64,
    /// Per-step displacement cap for particles.
    pub max_particle_step: f64,
    pub suction_half_angle_deg: f64,
    pub suction_range: f64,
    pub suction_strength: f64,
    pub capture_radius: f64,
    /// Minimum clearance above the tissue before a particle can be captured.
    pub capture_height: f64,
    pub max_tool_step: f64,
    /// Tool tip hover height above the tissue.
    pub hover_height: f64,
    /// Lowest the tip may get to the tissue.
    pub min_tool_clearance: f64,
    /// Suction engages when a target cell lies within this horizontal distance of the tip.
    pub engage_radius: f64,
    pub emitter_jitter: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            particle_radius: 0.001,
            gravity: 9.81,
            relax_iterations: 1,
            cohesion_range: 1.4,
            cohesion: 0.1,
            damping: 0.25,
            surface_friction: 0.6,
            max_particle_step: 0.0025,
            suction_half_angle_deg: 60.0,
            suction_range: 0.03,
            suction_strength: 100.0,
            capture_radius: 0.006,
            capture_height: 0.0015,
            max_tool_step: 0.004,
            hover_height: 0.008,
            min_tool_clearance: 0.003,
            engage_radius: 0.006,
            emitter_jitter: 0.001,
        }
    }
}

impl PhysicsConfig {
    pub fn diameter(&self) -> f64 {
        2.0 * self.particle_radius
    }
}

/// Suction tool tip state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolPose {
    pub tip: DVec3,
    pub suction: bool,
}

/// Commanded tool displacement for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ToolAction {
    pub displacement: DVec3,
}

impl ToolAction {
    pub const ZERO: ToolAction = ToolAction { displacement: DVec3::ZERO };

    pub fn new(dx: f64, dy: f64, dz: f64) -> Self {
        Self { displacement: DVec3::new(dx, dy, dz) }
    }

    /// Each component clamped to `[-max_step, max_step]`; NaN becomes zero.
    pub fn clamped(&self, max_step: f64) -> ToolAction {
        let c = |v: f64| if v.is_finite() { v.clamp(-max_step, max_step) } else { 0.0 };
        ToolAction::new(c(self.displacement.x), c(self.displacement.y), c(self.displacement.z))
    }

    pub fn norm(&self) -> f64 {
        self.displacement.length()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleedingEmitter {
    pub source: DVec3,
    /// Particles per step.
    pub rate: usize,
    /// Inclusive step interval `[start, end]`.
    pub start_step: u64,
    pub end_step: u64,
    /// Scenario pool the emitted blood belongs to.
    pub pool: u16,
}

impl BleedingEmitter {
    pub fn is_active(&self, step: u64) -> bool {
        step >= self.start_step && step <= self.end_step
    }
}

/// Static rigid clot body: all points within `radius` of segment `a`-`b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: DVec3,
    pub b: DVec3,
    pub radius: f64,
}

impl Capsule {
    pub fn closest_point(&self, p: DVec3) -> DVec3 {
        let ab = self.b - self.a;
        let len2 = ab.length_squared();
        let t = if len2 > 0.0 { ((p - self.a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        self.a + ab * t
    }

    /// Horizontal distance from `p` to the capsule axis projected on the plane.
    pub fn planar_distance(&self, p: DVec2) -> f64 {
        let a = self.a.truncate();
        let ab = self.b.truncate() - a;
        let len2 = ab.length_squared();
        let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        p.distance(a + ab * t)
    }
}

/// Running particle accounting for an episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParticleLedger {
    pub initial: usize,
    pub emitted: usize,
    pub removed: usize,
    pub truncations: Vec<TruncationEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationEvent {
    pub step: u64,
    pub requested: usize,
    pub emitted: usize,
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub positions: Vec<DVec3>,
    pub velocities: Vec<DVec3>,
    pub active: Vec<bool>,
    /// Scenario pool index each particle was spawned for.
    pub origin: Vec<u16>,
    capacity: usize,
    active_count: usize,
    pub tool: ToolPose,
    pub emitters: Vec<BleedingEmitter>,
    pub clots: Vec<Capsule>,
    pub step_index: u64,
    pub rng: ChaCha8Rng,
    pub ledger: ParticleLedger,
}

impl SimState {
    pub fn new(capacity: usize, tool: ToolPose, seed: u64) -> Self {
        Self {
            positions: Vec::with_capacity(capacity),
            velocities: Vec::with_capacity(capacity),
            active: Vec::with_capacity(capacity),
            origin: Vec::with_capacity(capacity),
            capacity,
            active_count: 0,
            tool,
            emitters: Vec::new(),
            clots: Vec::new(),
            step_index: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ledger: ParticleLedger::default(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Particles ever spawned (active or not).
    pub fn spawned(&self) -> usize {
        self.positions.len()
    }

    pub fn headroom(&self) -> usize {
        self.capacity - self.positions.len()
    }

    pub fn active_count(&self) -> usize {
        self.active_count
    }

    /// Appends an active particle; `None` when capacity is exhausted.
    pub fn spawn(&mut self, position: DVec3, origin: u16) -> Option<usize> {
        if self.positions.len() >= self.capacity {
            return None;
        }
        self.positions.push(position);
        self.velocities.push(DVec3::ZERO);
        self.active.push(true);
        self.origin.push(origin);
        self.active_count += 1;
        Some(self.positions.len() - 1)
    }

    /// Flags a particle inactive; returns whether it was active.
    pub fn deactivate(&mut self, index: usize) -> bool {
        if self.active[index] {
            self.active[index] = false;
            self.active_count -= 1;
            true
        } else {
            false
        }
    }

    pub fn active_positions(&self) -> impl Iterator<Item = DVec3> + '_ {
        self.positions.iter().zip(&self.active).filter(|(_, a)| **a).map(|(p, _)| *p)
    }

    /// Active particles per scenario pool origin.
    pub fn origin_counts(&self, pools: usize) -> Vec<u32> {
        let mut counts = vec![0u32; pools];
        for (o, a) in self.origin.iter().zip(&self.active) {
            if *a {
                if let Some(c) = counts.get_mut(*o as usize) {
                    *c += 1;
                }
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub removed: usize,
    pub emitted: usize,
    pub active_count: usize,
    pub tool_pose: ToolPose,
}

/// Per-particle suction acceleration from a cone whose apex is the tool tip
/// and whose axis points down (-z). Magnitude decays linearly to zero at the
/// cone range; inactive particles and a disengaged tool get zero.
pub fn compute_suction_force(state: &SimState, tool: &ToolPose, physics: &PhysicsConfig) -> Vec<DVec3> {
    state
        .positions
        .iter()
        .zip(&state.active)
        .map(|(p, a)| if *a && tool.suction { suction_at(*p, tool.tip, physics) } else { DVec3::ZERO })
        .collect()
}

#[inline]
pub fn suction_at(p: DVec3, tip: DVec3, physics: &PhysicsConfig) -> DVec3 {
    let w = p - tip;
    let d = w.length();
    let range = physics.suction_range;
    if d > range {
        return DVec3::ZERO;
    }
    // Axis is -z, so the axial component is -w.z.
    let cos_half = physics.suction_half_angle_deg.to_radians().cos();
    if -w.z < d * cos_half {
        return DVec3::ZERO;
    }
    let magnitude = physics.suction_strength * (1.0 - d / range);
    if d == 0.0 {
        DVec3::new(0.0, 0.0, magnitude)
    } else {
        -w / d * magnitude
    }
}

/// Deactivates every active particle captured by an engaged tool: within the
/// capture radius of the tip and lifted at least `capture_height` above the
/// tissue. Returns the number removed.
pub fn remove_captured(state: &mut SimState, surface: &impl HeightQuery, physics: &PhysicsConfig) -> usize {
    if !state.tool.suction {
        return 0;
    }
    let tip = state.tool.tip;
    let r2 = physics.capture_radius * physics.capture_radius;
    let mut removed = 0;
    for i in 0..state.positions.len() {
        if !state.active[i] {
            continue;
        }
        let p = state.positions[i];
        if p.distance_squared(tip) <= r2 && p.z >= surface.height_at(p.x, p.y) + physics.capture_height {
            state.deactivate(i);
            removed += 1;
        }
    }
    state.ledger.removed += removed;
    removed
}

/// Spawns `rate` particles for every emitter whose interval covers the
/// current step, as long as capacity remains. Truncation is logged.
pub fn emit_bleeding(state: &mut SimState, surface: &impl HeightQuery, physics: &PhysicsConfig) -> usize {
    let step = state.step_index;
    let mut total = 0;
    for e in 0..state.emitters.len() {
        let emitter = state.emitters[e].clone();
        if !emitter.is_active(step) {
            continue;
        }
        let n = emitter.rate.min(state.headroom());
        for _ in 0..n {
            let jx = state.rng.gen_range(-1.0..=1.0) * physics.emitter_jitter;
            let jy = state.rng.gen_range(-1.0..=1.0) * physics.emitter_jitter;
            let x = emitter.source.x + jx;
            let y = emitter.source.y + jy;
            let floor = surface.height_at(x, y) + physics.particle_radius;
            let p = DVec3::new(x, y, emitter.source.z.max(floor));
            state.spawn(p, emitter.pool);
        }
        if n < emitter.rate {
            state.ledger.truncations.push(TruncationEvent { step, requested: emitter.rate, emitted: n });
        }
        total += n;
    }
    state.ledger.emitted += total;
    total
}

/// Owns a scene and the scratch buffers needed to advance it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub state: SimState,
    surface: Arc<TissueSurface>,
    /// Dense bilinear cache of the surface used on the per-particle paths.
    heights: Arc<HeightMap>,
    physics: PhysicsConfig,
    grid: NeighborGrid,
    predicted: Vec<DVec3>,
}

/// Cache spacing for [`Simulation`] height lookups; bilinear error on the
/// generated terrains is orders of magnitude below the penetration tolerance.
const HEIGHT_CACHE_SPACING: f64 = 0.0005;

impl Simulation {
    pub fn new(state: SimState, surface: Arc<TissueSurface>, physics: PhysicsConfig) -> Self {
        let e = surface.extent();
        let cell = physics.diameter() * physics.cohesion_range.max(1.0);
        let grid = NeighborGrid::new(cell, e.min_x, e.min_y, e.max_x, e.max_y);
        let cols = ((e.width() / HEIGHT_CACHE_SPACING).ceil() as usize + 1).max(2);
        let rows = ((e.height() / HEIGHT_CACHE_SPACING).ceil() as usize + 1).max(2);
        let heights = Arc::new(sample_heightmap(&surface, rows, cols).expect("cache resolution is at least 2x2"));
        Self { state, surface, heights, physics, grid, predicted: Vec::new() }
    }

    pub fn surface(&self) -> &Arc<TissueSurface> {
        &self.surface
    }

    pub fn physics(&self) -> &PhysicsConfig {
        &self.physics
    }

    pub fn heights(&self) -> &HeightMap {
        &self.heights
    }

    /// Tool tip after applying a clamped action: kept inside the workspace,
    /// above the tissue and clear of clots.
    pub fn integrate_tool(&self, tip: DVec3, action: &ToolAction) -> DVec3 {
        let a = action.clamped(self.physics.max_tool_step);
        let mut next = tip + a.displacement;
        let xy = self.surface.extent().clamp(next.truncate());
        next.x = xy.x;
        next.y = xy.y;
        let floor = self.heights.sample(next.x, next.y) + self.physics.min_tool_clearance;
        if next.z < floor {
            next.z = floor;
        }
        push_out_of_clots(next, &self.state.clots, self.physics.min_tool_clearance)
    }

    /// Advances one step. Suction engagement comes from `state.tool.suction`.
    pub fn step(&mut self, action: &ToolAction, dt: f64) -> Result<StepOutcome, FluidError> {
        if !(dt > 0.0) {
            return Err(FluidError::SimulationFault { step: self.state.step_index, detail: format!("dt = {dt}") });
        }
        self.state.tool.tip = self.integrate_tool(self.state.tool.tip, action);
        let emitted = emit_bleeding(&mut self.state, &*self.heights, &self.physics);
        self.advance_particles(dt, true);
        let removed = remove_captured(&mut self.state, &*self.heights, &self.physics);
        self.check_finite()?;
        self.state.step_index += 1;
        Ok(StepOutcome { removed, emitted, active_count: self.state.active_count(), tool_pose: self.state.tool })
    }

    /// Physics without tool, emission, capture or clock advance.
    pub(crate) fn relax_only(&mut self, dt: f64) {
        self.advance_particles(dt, false);
    }

    fn check_finite(&self) -> Result<(), FluidError> {
        let bad = self
            .state
            .positions
            .iter()
            .zip(&self.state.velocities)
            .zip(&self.state.active)
            .position(|((p, v), a)| *a && !(p.is_finite() && v.is_finite()));
        match bad {
            Some(i) => Err(FluidError::SimulationFault {
                step: self.state.step_index,
                detail: format!("particle {i} is non-finite"),
            }),
            None if !self.state.tool.tip.is_finite() => Err(FluidError::SimulationFault {
                step: self.state.step_index,
                detail: "tool tip is non-finite".into(),
            }),
            None => Ok(()),
        }
    }

    fn advance_particles(&mut self, dt: f64, with_suction: bool) {
        let physics = &self.physics;
        let state = &mut self.state;
        let n = state.positions.len();
        let gravity = DVec3::new(0.0, 0.0, -physics.gravity);
        let suction = with_suction && state.tool.suction;
        let tip = state.tool.tip;
        let max_step = physics.max_particle_step;

        self.predicted.clear();
        self.predicted.extend_from_slice(&state.positions);
        for i in 0..n {
            if !state.active[i] {
                continue;
            }
            let mut acc = gravity;
            if suction {
                acc += suction_at(state.positions[i], tip, physics);
            }
            let v = state.velocities[i] + acc * dt;
            let mut step = v * dt;
            let len = step.length();
            if len > max_step {
                step *= max_step / len;
            }
            self.predicted[i] = state.positions[i] + step;
        }

        self.grid.rebuild(&self.predicted, &state.active);
        let d0 = physics.diameter();
        let d0_sq = d0 * d0;
        let reach = d0 * physics.cohesion_range;
        let reach_sq = reach * reach;
        for _ in 0..physics.relax_iterations {
            for k in 0..self.grid.sorted().len() {
                let i = self.grid.sorted()[k] as usize;
                let pred = &mut self.predicted;
                self.grid.for_each_near(i, |j| {
                    if j <= i {
                        return;
                    }
                    let delta = pred[j] - pred[i];
                    let dist_sq = delta.length_squared();
                    if dist_sq >= reach_sq || dist_sq == 0.0 {
                        return;
                    }
                    let dist = dist_sq.sqrt();
                    let normal = delta / dist;
                    let correction =
                        if dist_sq < d0_sq { 0.5 * (d0 - dist) } else { -0.5 * physics.cohesion * (dist - d0) };
                    pred[i] -= normal * correction;
                    pred[j] += normal * correction;
                });
            }
        }

        let extent = self.surface.extent();
        let r = physics.particle_radius;
        let surface = &*self.heights;
        for i in 0..n {
            if !state.active[i] {
                continue;
            }
            let old = state.positions[i];
            let mut p = self.predicted[i];
            let xy = extent.clamp(p.truncate());
            p.x = xy.x;
            p.y = xy.y;
            p = push_out_of_clots(p, &state.clots, r);
            let floor = surface.sample(p.x, p.y) + r;
            if p.z <= floor {
                // Contact with tissue: damp sliding, then settle on the floor.
                let slide = (p.truncate() - old.truncate()) * (1.0 - physics.surface_friction);
                let q = extent.clamp(old.truncate() + slide);
                p = DVec3::new(q.x, q.y, p.z.max(surface.sample(q.x, q.y) + r));
                p = push_out_of_clots(p, &state.clots, r);
                p.z = p.z.max(surface.sample(p.x, p.y) + r);
            }
            state.velocities[i] = (p - old) / dt * (1.0 - physics.damping);
            state.positions[i] = p;
        }
    }
}

fn push_out_of_clots(mut p: DVec3, clots: &[Capsule], particle_radius: f64) -> DVec3 {
    for clot in clots {
        let c = clot.closest_point(p);
        let w = p - c;
        let dist = w.length();
        let min = clot.radius + particle_radius;
        if dist < min {
            let dir = if dist > 1e-12 { w / dist } else { DVec3::Z };
            p = c + dir * min;
        }
    }
    p
}
