use std::collections::BTreeMap;
use std::sync::Arc;

use glam::DVec2;
use serde::{Deserialize, Serialize};

use super::{compute_reward, ControlError, RewardTerms};
use crate::fluid::{init_scene, SimState, Simulation, ToolAction};
use crate::harness::scenario::ScenarioConfig;
use crate::perception::{
    annotate_scene, build_observation, rasterize_mask, target_mask, BinaryMask, Observation, ObservationHistory,
    PerceptionError, PoolObservation, PoolTracker,
};
use crate::reasoning::{
    build_prompt, plan, should_replan, Backend, PlanOrder, PriorityPlan, PromptBundle, Provenance, ReasoningEvent,
    Templates,
};
use crate::tissue::{generate_surface, sample_heightmap, HeightMap};

/// High-level unit attached to an environment.
pub struct Reasoner {
    pub backend: Backend,
    pub templates: Templates,
    /// Operator guideline appended to the prompt; `None` leaves the switch off.
    pub context: Option<String>,
    /// Seed for the RANDOM backend.
    pub seed: u64,
}

impl Reasoner {
    pub fn new(backend: Backend, seed: u64) -> Self {
        Self { backend, templates: Templates::default(), context: None, seed }
    }

    pub fn with_context(mut self, context: impl Into<String>) -> Self {
        self.context = Some(context.into());
        self
    }

    /// LLM backends see the annotated image; the others never look at it.
    pub fn wants_image(&self) -> bool {
        matches!(self.backend, Backend::Llm(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplanTrigger {
    Initial,
    Pools,
    Operator,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvEvent {
    Replan {
        step: usize,
        trigger: ReplanTrigger,
        plan: PriorityPlan,
        degraded: bool,
    },
    Reasoning {
        step: usize,
        event: ReasoningEvent,
    },
    /// A replan would have abandoned pools already started; they were kept
    /// ahead of the rest.
    TargetRetained {
        step: usize,
        labels: Vec<String>,
    },
    /// No pool remains but blood does; the controller sees the whole scene.
    Cleanup {
        step: usize,
    },
    EmissionTruncated {
        step: u64,
        requested: usize,
        emitted: usize,
    },
    ContextSubmitted {
        step: usize,
        text: String,
    },
    PlanOverride {
        step: usize,
        labels: Vec<String>,
    },
}

impl EnvEvent {
    pub fn step(&self) -> usize {
        match self {
            EnvEvent::Replan { step, .. }
            | EnvEvent::Reasoning { step, .. }
            | EnvEvent::TargetRetained { step, .. }
            | EnvEvent::Cleanup { step }
            | EnvEvent::ContextSubmitted { step, .. }
            | EnvEvent::PlanOverride { step, .. } => *step,
            EnvEvent::EmissionTruncated { step, .. } => *step as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step: usize,
    pub removed: usize,
    pub emitted: usize,
    pub active: usize,
    /// Initial plus emitted particles so far.
    pub spawned: usize,
    pub target_label: Option<String>,
    pub tool: [f64; 3],
    pub suction: bool,
    pub replanned: bool,
}

#[derive(Debug, Clone)]
pub struct EnvStep {
    pub observation: Observation,
    pub reward: RewardTerms,
    /// All blood removed.
    pub terminated: bool,
    /// Step budget exhausted with blood remaining.
    pub truncated: bool,
    pub info: StepInfo,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvOptions {
    /// Automatic replans finish pools already started before new ones; only
    /// a bleeding pool may go ahead of them.
    pub commit_target: bool,
}

impl Default for EnvOptions {
    fn default() -> Self {
        Self { commit_target: true }
    }
}

/// Builds the tissue surface and settled scene for a scenario.
pub fn prepare_scene(config: &ScenarioConfig) -> Result<Simulation, ControlError> {
    config.validate().map_err(|e| ControlError::Scenario(e.to_string()))?;
    let s = &config.surface;
    let surface = generate_surface(config.seed, s.degree_n, s.degree_m, s.extent, s.amplitude)
        .map_err(|e| ControlError::Scenario(e.to_string()))?;
    init_scene(config, Arc::new(surface)).map_err(|e| ControlError::Scenario(e.to_string()))
}

/// Dominant particle origin under each pool's cells.
pub fn label_origins(pools: &[PoolObservation], mask: &BinaryMask, state: &SimState) -> BTreeMap<String, u16> {
    let mut owner = vec![usize::MAX; mask.rows() * mask.cols()];
    for (k, p) in pools.iter().enumerate() {
        for &c in &p.cells {
            owner[c as usize] = k;
        }
    }
    let mut votes: Vec<BTreeMap<u16, usize>> = vec![BTreeMap::new(); pools.len()];
    for (i, p) in state.positions.iter().enumerate() {
        if !state.active[i] {
            continue;
        }
        let (r, c) = mask.cell_of(p.truncate());
        let k = owner[r * mask.cols() + c];
        if k != usize::MAX {
            *votes[k].entry(state.origin[i]).or_default() += 1;
        }
    }
    pools
        .iter()
        .zip(votes)
        .filter_map(|(p, v)| {
            let best = v.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))?;
            Some((p.label.clone(), best.0))
        })
        .collect()
}

/// One suction episode: fluid scene, pool tracking, the reasoner, the mask
/// sensor and the reward.
///
/// Observation: tissue height map plus four stacked target masks and four tool
/// positions, newest first (see [`Observation::to_tensor`] for the flat
/// layout). Action: a 3D tip displacement in meters, clamped per axis to the
/// physics `max_tool_step`. Suction engages automatically when the tool is
/// within `engage_radius` of a target cell. Reward: [`compute_reward`].
pub struct SuctionEnv {
    scenario: ScenarioConfig,
    sim: Simulation,
    obs_heights: Arc<HeightMap>,
    tracker: PoolTracker,
    reasoner: Reasoner,
    options: EnvOptions,
    scene: BinaryMask,
    pools: Vec<PoolObservation>,
    plan: PriorityPlan,
    target: BinaryMask,
    target_label: Option<String>,
    started: Vec<String>,
    cleanup: bool,
    history: ObservationHistory,
    step: usize,
    done: bool,
    pending_operator: bool,
    operator_plan: bool,
    tainted: bool,
    last_prompt: Option<PromptBundle>,
    events: Vec<EnvEvent>,
    initial_origins: BTreeMap<String, u16>,
    truncations_seen: usize,
}

impl SuctionEnv {
    pub fn reset(scenario: &ScenarioConfig, reasoner: Reasoner) -> Result<(Self, EnvStep), ControlError> {
        let sim = prepare_scene(scenario)?;
        Self::from_simulation(scenario, sim, reasoner, EnvOptions::default())
    }

    /// Starts an episode from an already settled scene.
    pub fn from_simulation(
        scenario: &ScenarioConfig,
        sim: Simulation,
        reasoner: Reasoner,
        options: EnvOptions,
    ) -> Result<(Self, EnvStep), ControlError> {
        let res = scenario.perception.resolution;
        let extent = sim.surface().extent();
        let obs_heights =
            Arc::new(sample_heightmap(sim.surface(), res, res).map_err(|e| ControlError::Scenario(e.to_string()))?);
        let scene = rasterize_mask(&sim.state, res, res, extent)?;
        let mut tracker = PoolTracker::new(scenario.perception.clone());
        let pools = tracker.update(&scene, &sim.state, scenario.distractor_tool.as_ref());
        let initial_origins = label_origins(&pools, &scene, &sim.state);
        let mut env = Self {
            scenario: scenario.clone(),
            target: scene.empty_like(),
            scene,
            sim,
            obs_heights,
            tracker,
            reasoner,
            options,
            pools,
            plan: PriorityPlan::no_reasoning(),
            target_label: None,
            started: Vec::new(),
            cleanup: false,
            history: ObservationHistory::new(),
            step: 0,
            done: false,
            pending_operator: false,
            operator_plan: false,
            tainted: false,
            last_prompt: None,
            events: Vec::new(),
            initial_origins,
            truncations_seen: 0,
        };
        if !env.pools.is_empty() {
            env.replan(ReplanTrigger::Initial)?;
        }
        env.update_target()?;
        let observation = build_observation(&env.obs_heights, &env.target, env.sim.state.tool.tip, &mut env.history);
        let active = env.sim.state.active_count();
        let info = env.info(0, 0, true);
        let step = EnvStep { observation, reward: RewardTerms::ZERO, terminated: active == 0, truncated: false, info };
        env.done = step.done();
        Ok((env, step))
    }

    pub fn step(&mut self, action: &ToolAction) -> Result<EnvStep, ControlError> {
        if self.done {
            return Err(ControlError::Contract("step called on a finished episode".into()));
        }
        let next_tip = self.sim.integrate_tool(self.sim.state.tool.tip, action);
        self.sim.state.tool.suction = self.near_target(next_tip.truncate());
        let before = self.sim.state.active_count();
        let out = self.sim.step(action, self.scenario.dt).map_err(|e| ControlError::Simulation(e.to_string()))?;
        self.step += 1;
        self.forward_truncations();
        let reward = compute_reward((before + out.emitted) as i64, out.active_count as i64, action)?;

        let previous = std::mem::take(&mut self.pools);
        self.scene = rasterize_mask(&self.sim.state, self.scene.rows(), self.scene.cols(), self.scene.extent())?;
        self.pools = self.tracker.update(&self.scene, &self.sim.state, self.scenario.distractor_tool.as_ref());
        let operator = std::mem::take(&mut self.pending_operator);
        let mut replanned = false;
        if operator {
            self.operator_plan = false;
        }
        if !self.pools.is_empty() && (operator || (!self.operator_plan && should_replan(&previous, &self.pools, false)))
        {
            self.replan(if operator { ReplanTrigger::Operator } else { ReplanTrigger::Pools })?;
            replanned = true;
        }
        replanned |= self.update_target()?;

        let observation =
            build_observation(&self.obs_heights, &self.target, self.sim.state.tool.tip, &mut self.history);
        let terminated = out.active_count == 0;
        let truncated = !terminated && self.step >= self.scenario.step_budget;
        self.done = terminated || truncated;
        let info = self.info(out.removed, out.emitted, replanned);
        Ok(EnvStep { observation, reward, terminated, truncated, info })
    }

    fn info(&self, removed: usize, emitted: usize, replanned: bool) -> StepInfo {
        let tip = self.sim.state.tool.tip;
        StepInfo {
            step: self.step,
            removed,
            emitted,
            active: self.sim.state.active_count(),
            spawned: self.sim.state.spawned(),
            target_label: self.target_label.clone(),
            tool: tip.to_array(),
            suction: self.sim.state.tool.suction,
            replanned,
        }
    }

    fn near_target(&self, tip: DVec2) -> bool {
        let r = self.sim.physics().engage_radius;
        let m = &self.target;
        let (row, col) = m.cell_of(tip);
        let dr = (r / m.cell_height()).ceil() as usize + 1;
        let dc = (r / m.cell_width()).ceil() as usize + 1;
        for rr in row.saturating_sub(dr)..=(row + dr).min(m.rows() - 1) {
            for cc in col.saturating_sub(dc)..=(col + dc).min(m.cols() - 1) {
                if m.get(rr, cc) && m.cell_center(rr, cc).distance(tip) <= r {
                    return true;
                }
            }
        }
        false
    }

    fn forward_truncations(&mut self) {
        for t in &self.sim.state.ledger.truncations[self.truncations_seen..] {
            self.events.push(EnvEvent::EmissionTruncated { step: t.step, requested: t.requested, emitted: t.emitted });
        }
        self.truncations_seen = self.sim.state.ledger.truncations.len();
    }

    fn bundle(&self) -> Result<PromptBundle, ControlError> {
        let image = if self.reasoner.wants_image() {
            let img = annotate_scene(
                &self.sim.state,
                &self.pools,
                &self.scene,
                &*self.obs_heights,
                self.scenario.distractor_tool.as_ref(),
            )?;
            Some(Arc::new(img.png))
        } else {
            None
        };
        Ok(build_prompt(&self.pools, self.reasoner.context.as_deref(), &self.reasoner.templates, image)?)
    }

    fn replan(&mut self, trigger: ReplanTrigger) -> Result<(), ControlError> {
        let bundle = self.bundle()?;
        let outcome = plan(&self.reasoner.backend, &bundle, self.reasoner.seed);
        self.last_prompt = Some(bundle);
        for event in outcome.events {
            self.events.push(EnvEvent::Reasoning { step: self.step, event });
        }
        self.tainted |= outcome.degraded;
        let mut next = outcome.plan;
        if self.options.commit_target && matches!(trigger, ReplanTrigger::Pools) {
            if let Some(labels) = self.retain_started(&mut next) {
                self.events.push(EnvEvent::TargetRetained { step: self.step, labels });
            }
        }
        self.events.push(EnvEvent::Replan { step: self.step, trigger, plan: next.clone(), degraded: outcome.degraded });
        self.plan = next;
        Ok(())
    }

    /// Pools already started (current target first, then the rest in the
    /// order they were started) move to the front of `next`, behind a
    /// bleeding pool that has not been started yet.
    fn retain_started(&self, next: &mut PriorityPlan) -> Option<Vec<String>> {
        let PlanOrder::Ranked(labels) = &mut next.order else { return None };
        let alive = |l: &String| self.pools.iter().any(|p| &p.label == l);
        let bleeding = |l: &String| self.pools.iter().any(|p| &p.label == l && p.bleeding);
        let mut started: Vec<String> = self.target_label.iter().filter(|l| alive(l)).cloned().collect();
        for l in &self.started {
            if alive(l) && !started.contains(l) {
                started.push(l.clone());
            }
        }
        if started.is_empty() {
            return None;
        }
        let mut order = Vec::with_capacity(labels.len());
        if let Some(head) = labels.first() {
            if bleeding(head) && !started.contains(head) && !started.iter().any(|l| bleeding(l)) {
                order.push(head.clone());
            }
        }
        for l in started.iter().chain(labels.iter()) {
            if !order.contains(l) {
                order.push(l.clone());
            }
        }
        if order == *labels {
            return None;
        }
        *labels = order;
        Some(started)
    }

    /// Applies the mask sensor. Returns true if an exhaustion replan ran.
    fn update_target(&mut self) -> Result<bool, ControlError> {
        let mut replanned = false;
        let mut found = target_mask(&self.scene, &self.pools, &self.plan);
        if matches!(found, Err(PerceptionError::PlanExhausted)) && !self.pools.is_empty() {
            self.operator_plan = false;
            self.replan(ReplanTrigger::Exhausted)?;
            replanned = true;
            found = target_mask(&self.scene, &self.pools, &self.plan);
        }
        match found {
            Ok(t) => {
                if let Some(l) = &t.label {
                    if !self.started.contains(l) {
                        self.started.push(l.clone());
                    }
                }
                self.target = t.mask;
                self.target_label = t.label;
                self.cleanup = false;
            }
            Err(PerceptionError::PlanExhausted) => {
                if !self.cleanup && !self.scene.is_empty() {
                    self.events.push(EnvEvent::Cleanup { step: self.step });
                }
                self.cleanup = true;
                self.target = self.scene.clone();
                self.target_label = None;
            }
            Err(e) => return Err(e.into()),
        }
        Ok(replanned)
    }

    /// Stores operator context; the next step replans with it.
    pub fn submit_context(&mut self, text: &str) -> Result<(), ControlError> {
        if text.trim().is_empty() {
            return Err(ControlError::Operator("context text is empty".into()));
        }
        self.reasoner.context = Some(text.to_string());
        self.pending_operator = true;
        self.events.push(EnvEvent::ContextSubmitted { step: self.step, text: text.to_string() });
        Ok(())
    }

    /// Replaces the plan with an operator ordering; the mask sensor follows at once.
    pub fn override_plan(&mut self, labels: Vec<String>) -> Result<(), ControlError> {
        let known = self.labels();
        let plan = PriorityPlan::ranked(labels.clone(), Provenance::Operator);
        if labels.is_empty() || plan.validate(&known).is_err() {
            return Err(ControlError::UnknownLabels { requested: labels, known });
        }
        self.events.push(EnvEvent::PlanOverride { step: self.step, labels });
        self.events.push(EnvEvent::Replan {
            step: self.step,
            trigger: ReplanTrigger::Operator,
            plan: plan.clone(),
            degraded: false,
        });
        self.plan = plan;
        self.operator_plan = true;
        self.pending_operator = false;
        self.update_target()?;
        Ok(())
    }

    /// Fresh observation of the current frame without advancing history.
    pub fn peek_observation(&self) -> Observation {
        let mut h = self.history.clone();
        build_observation(&self.obs_heights, &self.target, self.sim.state.tool.tip, &mut h)
    }

    pub fn labels(&self) -> Vec<String> {
        self.pools.iter().map(|p| p.label.clone()).collect()
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn state(&self) -> &SimState {
        &self.sim.state
    }

    pub fn pools(&self) -> &[PoolObservation] {
        &self.pools
    }

    pub fn scene(&self) -> &BinaryMask {
        &self.scene
    }

    pub fn plan(&self) -> &PriorityPlan {
        &self.plan
    }

    pub fn target(&self) -> &BinaryMask {
        &self.target
    }

    pub fn target_label(&self) -> Option<&str> {
        self.target_label.as_deref()
    }

    pub fn in_cleanup(&self) -> bool {
        self.cleanup
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// An LLM call failed and the rule fallback was used at least once.
    pub fn tainted(&self) -> bool {
        self.tainted
    }

    pub fn context(&self) -> Option<&str> {
        self.reasoner.context.as_deref()
    }

    pub fn last_prompt(&self) -> Option<&PromptBundle> {
        self.last_prompt.as_ref()
    }

    pub fn events(&self) -> &[EnvEvent] {
        &self.events
    }

    /// Events since the caller last drained them.
    pub fn drain_events(&mut self) -> Vec<EnvEvent> {
        std::mem::take(&mut self.events)
    }

    /// Initial pool labels mapped to the scenario pool they came from.
    pub fn initial_origins(&self) -> &BTreeMap<String, u16> {
        &self.initial_origins
    }

    pub fn obs_heights(&self) -> &Arc<HeightMap> {
        &self.obs_heights
    }
}
