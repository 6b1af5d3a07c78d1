use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::module::{reasoner_for, LlmBinding, ReasoningModule};
use super::scenario::ScenarioConfig;
use super::HarnessError;
use crate::control::{
    prepare_scene, scripted_policy, EnvEvent, EnvOptions, EnvStep, PolicyConfig, ReplanTrigger, SuctionEnv,
};
use crate::fluid::Simulation;
use crate::reasoning::{PriorityPlan, Templates};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioRef {
    pub environment: u8,
    pub seed: u64,
    pub distractor_tool: bool,
    /// SHA-256 of the scenario's JSON form.
    pub fingerprint: String,
}

impl ScenarioRef {
    pub fn of(scenario: &ScenarioConfig) -> Self {
        let json = serde_json::to_vec(scenario).expect("scenario serializes");
        Self {
            environment: scenario.environment,
            seed: scenario.seed,
            distractor_tool: scenario.distractor_tool.is_some(),
            fingerprint: format!("{:x}", Sha256::digest(&json)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub schema_version: u32,
    pub module: ReasoningModule,
    pub scenario: ScenarioRef,
    pub pools: usize,
    /// Scenario pool fed by the emitter.
    pub bleeding_pool: Option<usize>,
    pub clot_pool: Option<usize>,
    pub initial_particles: usize,
    pub dt: f64,
    pub step_budget: usize,
}

/// State after step `step`; index 0 is the scene at reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    pub step: usize,
    pub active: usize,
    pub spawned: usize,
    /// active / spawned.
    pub remaining: f64,
    pub tool: [f64; 3],
    pub target: Option<String>,
    pub suction: bool,
    pub reward: f64,
    /// Active particles per scenario pool of origin.
    pub origin_active: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub step: usize,
    pub trigger: ReplanTrigger,
    pub degraded: bool,
    pub plan: PriorityPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub terminated: bool,
    pub truncated: bool,
    /// A degraded LLM answer was replaced by the rule ordering at least once.
    pub tainted: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub header: RecordHeader,
    pub samples: Vec<StepSample>,
    pub plans: Vec<PlanEntry>,
    /// Everything except replans, which live in `plans`.
    pub events: Vec<EnvEvent>,
    pub outcome: RecordOutcome,
}

/// One NDJSON line of a persisted record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RecordLine {
    Header(RecordHeader),
    Plan(PlanEntry),
    Event { event: EnvEvent },
    Step(StepSample),
    End(RecordOutcome),
}

impl EpisodeRecord {
    /// Lines in time order: for each step, its plans and events precede the
    /// sample.
    pub fn lines(&self) -> Vec<RecordLine> {
        let mut out = vec![RecordLine::Header(self.header.clone())];
        let (mut p, mut e) = (0, 0);
        for s in &self.samples {
            while p < self.plans.len() && self.plans[p].step <= s.step {
                out.push(RecordLine::Plan(self.plans[p].clone()));
                p += 1;
            }
            while e < self.events.len() && self.events[e].step() <= s.step {
                out.push(RecordLine::Event { event: self.events[e].clone() });
                e += 1;
            }
            out.push(RecordLine::Step(s.clone()));
        }
        out.extend(self.plans[p..].iter().cloned().map(RecordLine::Plan));
        out.extend(self.events[e..].iter().cloned().map(|event| RecordLine::Event { event }));
        out.push(RecordLine::End(self.outcome.clone()));
        out
    }

    pub fn write_ndjson(&self, mut w: impl Write) -> std::io::Result<()> {
        for line in self.lines() {
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_ndjson(r: impl BufRead) -> Result<Self, HarnessError> {
        let mut header = None;
        let mut outcome = None;
        let (mut samples, mut plans, mut events) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| HarnessError::Record(format!("line {}: {e}", n + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine =
                serde_json::from_str(&line).map_err(|e| HarnessError::Record(format!("line {}: {e}", n + 1)))?;
            match parsed {
                RecordLine::Header(h) if header.is_none() => header = Some(h),
                RecordLine::Header(_) => return Err(HarnessError::Record(format!("line {}: second header", n + 1))),
                RecordLine::Plan(p) => plans.push(p),
                RecordLine::Event { event } => events.push(event),
                RecordLine::Step(s) => samples.push(s),
                RecordLine::End(o) => outcome = Some(o),
            }
        }
        let header = header.ok_or_else(|| HarnessError::Record("missing header line".into()))?;
        if header.schema_version != RECORD_SCHEMA_VERSION {
            return Err(HarnessError::Record(format!(
                "record schema version {} not supported (expected {RECORD_SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let outcome = outcome.ok_or_else(|| HarnessError::Record("missing end line (record incomplete)".into()))?;
        Ok(Self { header, samples, plans, events, outcome })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
        Self::read_ndjson(std::io::BufReader::new(file))
            .map_err(|e| HarnessError::Record(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_ndjson(&mut w).map_err(|e| HarnessError::io(path, e))?;
        w.flush().map_err(|e| HarnessError::io(path, e))
    }

    /// `env{E}_{module}_{seed}.ndjson`
    pub fn file_name(&self) -> String {
        format!("env{}_{}_{}.ndjson", self.header.scenario.environment, self.header.module, self.header.scenario.seed)
    }
}

#[derive(Clone)]
pub struct RunOptions {
    /// Controller gains; `None` derives them from the scenario physics.
    pub policy: Option<PolicyConfig>,
    pub env: EnvOptions,
    pub templates: Templates,
    pub llm: Option<LlmBinding>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { policy: None, env: EnvOptions::default(), templates: Templates::default(), llm: None }
    }
}

/// Runs one episode from scratch.
pub fn run_episode(
    scenario: &ScenarioConfig,
    module: ReasoningModule,
    opts: &RunOptions,
) -> Result<EpisodeRecord, HarnessError> {
    let sim = prepare_scene(scenario)?;
    run_prepared(scenario, sim, module, opts)
}

/// Runs one episode on an already settled scene.
pub fn run_prepared(
    scenario: &ScenarioConfig,
    sim: Simulation,
    module: ReasoningModule,
    opts: &RunOptions,
) -> Result<EpisodeRecord, HarnessError> {
    let reasoner = reasoner_for(module, scenario.seed, &opts.templates, opts.llm.as_ref())?;
    let (mut env, mut step) = SuctionEnv::from_simulation(scenario, sim, reasoner, opts.env)?;
    let policy = opts.policy.unwrap_or_else(|| PolicyConfig::from_physics(&scenario.physics));
    let mut recorder = Recorder::new(scenario, module);
    recorder.observe(&mut env, &step);
    while !step.done() {
        let action = scripted_policy(&step.observation, &policy).action;
        step = env.step(&action)?;
        recorder.observe(&mut env, &step);
    }
    Ok(recorder.finish(&env, &step))
}

/// Accumulates a record from an environment driven by someone else.
pub struct Recorder {
    header: RecordHeader,
    samples: Vec<StepSample>,
    plans: Vec<PlanEntry>,
    events: Vec<EnvEvent>,
}

impl Recorder {
    pub fn new(scenario: &ScenarioConfig, module: ReasoningModule) -> Self {
        let header = RecordHeader {
            schema_version: RECORD_SCHEMA_VERSION,
            module,
            scenario: ScenarioRef::of(scenario),
            pools: scenario.pools.len(),
            bleeding_pool: scenario.emitters.first().map(|e| e.pool),
            clot_pool: scenario.clots.first().map(|c| c.pool),
            initial_particles: scenario.pools.iter().map(|p| p.particles).sum(),
            dt: scenario.dt,
            step_budget: scenario.step_budget,
        };
        Self { header, samples: Vec::new(), plans: Vec::new(), events: Vec::new() }
    }

    /// Takes the environment's pending events and appends `step` as a sample.
    pub fn observe(&mut self, env: &mut SuctionEnv, step: &EnvStep) {
        for event in env.drain_events() {
            self.push_event(event);
        }
        let info = &step.info;
        self.samples.push(StepSample {
            step: info.step,
            active: info.active,
            spawned: info.spawned,
            remaining: if info.spawned == 0 { 0.0 } else { info.active as f64 / info.spawned as f64 },
            tool: info.tool,
            target: info.target_label.clone(),
            suction: info.suction,
            reward: step.reward.total,
            origin_active: env.state().origin_counts(self.header.pools),
        });
    }

    pub fn push_event(&mut self, event: EnvEvent) {
        match event {
            EnvEvent::Replan { step, trigger, plan, degraded } => {
                self.plans.push(PlanEntry { step, trigger, degraded, plan })
            }
            other => self.events.push(other),
        }
    }

    pub fn finish(self, env: &SuctionEnv, last: &EnvStep) -> EpisodeRecord {
        let outcome = RecordOutcome {
            terminated: last.terminated,
            truncated: last.truncated,
            tainted: env.tainted(),
            steps: last.info.step,
        };
        EpisodeRecord { header: self.header, samples: self.samples, plans: self.plans, events: self.events, outcome }
    }
}
