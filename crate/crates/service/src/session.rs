use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use tokio::sync::{broadcast, oneshot};

use suction_core::control::{
    prepare_scene, scripted_policy, ControlError, EnvEvent, EnvOptions, EnvStep, PolicyConfig, SuctionEnv,
};
use suction_core::harness::scenario::{generate_scenario_with, ScenarioConfig, ScenarioOptions};
use suction_core::harness::{reasoner_for, EpisodeRecord, ReasoningModule, Recorder};
use suction_core::reasoning::PromptBundle;

use crate::protocol::*;
use crate::ServiceConfig;

pub(crate) enum Command {
    Op { id: u64, request: Request, reply: oneshot::Sender<CommandAck> },
    Record(oneshot::Sender<Option<EpisodeRecord>>),
}

pub(crate) enum Request {
    Context(String),
    Plan(Vec<String>),
    Pause,
    Resume,
    Advance(usize),
    Close,
}

impl Request {
    fn kind(&self) -> CommandKind {
        match self {
            Request::Context(_) => CommandKind::Context,
            Request::Plan(_) => CommandKind::Plan,
            Request::Pause => CommandKind::Pause,
            Request::Resume => CommandKind::Resume,
            Request::Advance(_) => CommandKind::Advance,
            Request::Close => CommandKind::Close,
        }
    }
}

/// Latest messages per kind, replayed to late subscribers.
#[derive(Default)]
struct Latest {
    seq: u64,
    state: Option<Arc<SessionMessage>>,
    /// Plan the cached state frame was produced under.
    state_plan: Option<Arc<SessionMessage>>,
    plan: Option<Arc<SessionMessage>>,
    prompt: Option<Arc<SessionMessage>>,
    end: Option<Arc<SessionMessage>>,
}

/// Fan-out point of one session's stream.
pub struct Hub {
    tx: broadcast::Sender<Arc<SessionMessage>>,
    latest: Mutex<Latest>,
}

impl Hub {
    fn new() -> Self {
        Self { tx: broadcast::channel(4096).0, latest: Mutex::new(Latest::default()) }
    }

    /// Live receiver plus the snapshot a new subscriber starts from, in
    /// sequence order. Live messages at or below the snapshot's last
    /// sequence number are duplicates.
    pub fn subscribe(&self) -> (broadcast::Receiver<Arc<SessionMessage>>, Vec<Arc<SessionMessage>>) {
        let latest = self.latest.lock().unwrap();
        let rx = self.tx.subscribe();
        let mut snap: Vec<Arc<SessionMessage>> =
            [&latest.state_plan, &latest.prompt, &latest.plan, &latest.state, &latest.end]
                .into_iter()
                .flatten()
                .cloned()
                .collect();
        snap.sort_by_key(|m| m.seq);
        snap.dedup_by_key(|m| m.seq);
        (rx, snap)
    }

    fn publish(&self, body: MessageBody) -> u64 {
        let mut latest = self.latest.lock().unwrap();
        latest.seq += 1;
        let msg = Arc::new(SessionMessage { seq: latest.seq, body });
        match &msg.body {
            MessageBody::State(frame) => {
                if latest.plan.as_ref().is_some_and(|p| p.seq == frame.plan_seq) {
                    latest.state_plan = latest.plan.clone();
                }
                latest.state = Some(msg.clone());
            }
            MessageBody::Plan(_) => latest.plan = Some(msg.clone()),
            MessageBody::Prompt(_) => latest.prompt = Some(msg.clone()),
            MessageBody::End(_) => latest.end = Some(msg.clone()),
            _ => {}
        }
        let _ = self.tx.send(msg);
        latest.seq
    }
}

/// What the server keeps per session.
pub(crate) struct Handle {
    pub commands: mpsc::Sender<Command>,
    pub hub: Arc<Hub>,
    pub status: Arc<Mutex<SessionStatus>>,
}

impl Handle {
    pub fn phase(&self) -> Phase {
        self.status.lock().unwrap().phase
    }
}

/// Builds the episode on a dedicated thread and returns once it is ready.
pub(crate) async fn spawn(id: String, req: CreateSession, config: Arc<ServiceConfig>) -> Result<Handle, ApiError> {
    let (ready_tx, ready_rx) = oneshot::channel();
    std::thread::Builder::new()
        .name(format!("session-{id}"))
        .spawn(move || match Session::start(&id, &req, config) {
            Ok((session, handle)) => {
                let _ = ready_tx.send(Ok(handle));
                session.run();
            }
            Err(e) => {
                let _ = ready_tx.send(Err(e));
            }
        })
        .map_err(|e| ApiError::new(ErrorCode::Internal, format!("spawning session thread: {e}")))?;
    ready_rx.await.map_err(|_| ApiError::new(ErrorCode::Internal, "session thread died during setup"))?
}

struct Session {
    config: Arc<ServiceConfig>,
    env: SuctionEnv,
    step: EnvStep,
    recorder: Option<Recorder>,
    record: Option<EpisodeRecord>,
    policy: PolicyConfig,
    hub: Arc<Hub>,
    status: Arc<Mutex<SessionStatus>>,
    commands: mpsc::Receiver<Command>,
    paused: bool,
    finished: bool,
    plan_seq: u64,
    last_prompt: Option<PromptBundle>,
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(ErrorCode::Internal, e.to_string())
}

impl Session {
    fn start(id: &str, req: &CreateSession, config: Arc<ServiceConfig>) -> Result<(Self, Handle), ApiError> {
        if !(1..=4).contains(&req.environment) {
            return Err(ApiError::new(
                ErrorCode::InvalidRequest,
                format!("environment {} not in 1..=4", req.environment),
            ));
        }
        let opts = ScenarioOptions { distractor_tool: req.distractor_tool, ..ScenarioOptions::default() };
        let scenario = generate_scenario_with(req.environment, req.seed, &opts)
            .map_err(|e| ApiError::new(ErrorCode::InvalidRequest, e.to_string()))?;
        Self::start_with(id, scenario, req.module, config)
    }

    fn start_with(
        id: &str,
        scenario: ScenarioConfig,
        module: ReasoningModule,
        config: Arc<ServiceConfig>,
    ) -> Result<(Self, Handle), ApiError> {
        let reasoner = reasoner_for(module, scenario.seed, &config.templates, config.llm.as_ref())
            .map_err(|e| ApiError::new(ErrorCode::InvalidRequest, e.to_string()))?;
        let sim = prepare_scene(&scenario).map_err(internal)?;
        let (env, step) =
            SuctionEnv::from_simulation(&scenario, sim, reasoner, EnvOptions::default()).map_err(internal)?;
        let status = SessionStatus {
            id: id.to_string(),
            protocol_version: PROTOCOL_VERSION,
            environment: scenario.environment,
            seed: scenario.seed,
            module,
            phase: Phase::Paused,
            lockstep: config.lockstep,
            step: 0,
            active: step.info.active,
            remaining: 1.0,
            target: None,
            plan: None,
            context: None,
            last_seq: 0,
        };
        let (tx, rx) = mpsc::channel();
        let hub = Arc::new(Hub::new());
        let status = Arc::new(Mutex::new(status));
        let handle = Handle { commands: tx, hub: hub.clone(), status: status.clone() };
        let mut session = Session {
            policy: PolicyConfig::from_physics(&scenario.physics),
            recorder: Some(Recorder::new(&scenario, module)),
            record: None,
            config,
            env,
            step,
            hub,
            status,
            commands: rx,
            paused: true,
            finished: false,
            plan_seq: 0,
            last_prompt: None,
        };
        session.flush_events();
        let first = session.step.clone();
        session.observe(&first);
        session.publish_state();
        session.update_status();
        if first.done() {
            session.finish();
        }
        Ok((session, handle))
    }

    fn run(mut self) {
        let period = Duration::from_secs_f64(1.0 / self.config.steps_per_second.max(1e-3));
        let mut next_tick = Instant::now();
        let mut next_beat = Instant::now() + self.config.heartbeat;
        loop {
            let ticking = !self.config.lockstep && !self.paused && !self.finished;
            let beating = self.paused && !self.finished;
            let deadline = if ticking {
                Some(next_tick)
            } else if beating {
                Some(next_beat)
            } else {
                None
            };
            let now = Instant::now();
            if let Some(d) = deadline.filter(|d| *d <= now) {
                if ticking {
                    self.advance(1);
                    next_tick = (d + period).max(now - period);
                } else {
                    self.publish(MessageBody::Heartbeat(Heartbeat { step: self.env.step_index(), paused: true }));
                    next_beat = now + self.config.heartbeat;
                }
                continue;
            }
            let cmd = match deadline {
                Some(d) => self.commands.recv_timeout(d - now),
                None => self.commands.recv().map_err(|_| RecvTimeoutError::Disconnected),
            };
            match cmd {
                Ok(Command::Op { id, request, reply }) => {
                    let close = matches!(request, Request::Close);
                    let was_paused = self.paused;
                    let ack = self.apply(id, request);
                    let _ = reply.send(ack);
                    if was_paused && !self.paused {
                        next_tick = Instant::now();
                    }
                    if close {
                        return;
                    }
                }
                Ok(Command::Record(reply)) => {
                    let _ = reply.send(self.record.clone());
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return,
            }
        }
    }

    fn apply(&mut self, id: u64, request: Request) -> CommandAck {
        let command = request.kind();
        let result = match request {
            _ if self.finished && command != CommandKind::Close => {
                Err(ApiError::new(ErrorCode::Finished, "episode already finished"))
            }
            Request::Context(text) => self.env.submit_context(&text).map_err(|e| match e {
                ControlError::Operator(m) => ApiError::new(ErrorCode::EmptyContext, m),
                other => internal(other),
            }),
            Request::Plan(labels) => self.env.override_plan(labels).map_err(|e| match e {
                ControlError::UnknownLabels { requested, known } => ApiError {
                    code: ErrorCode::UnknownLabels,
                    message: format!("unknown pool labels {requested:?}"),
                    known_labels: Some(known),
                },
                ControlError::Operator(m) => ApiError::new(ErrorCode::InvalidRequest, m),
                other => internal(other),
            }),
            Request::Pause => {
                self.paused = true;
                Ok(())
            }
            Request::Resume => {
                self.paused = false;
                Ok(())
            }
            Request::Advance(_) if !self.config.lockstep => {
                Err(ApiError::new(ErrorCode::NotLockstep, "advance is only available in lockstep mode"))
            }
            Request::Advance(_) if self.paused => Err(ApiError::new(ErrorCode::Paused, "session is paused")),
            Request::Advance(n) => {
                self.advance(n);
                Ok(())
            }
            Request::Close => Ok(()),
        };
        self.flush_events();
        if command == CommandKind::Plan && result.is_ok() {
            self.publish_state();
        }
        self.update_status();
        let ack = CommandAck {
            command_id: id,
            command,
            ok: result.is_ok(),
            step: self.env.step_index(),
            error: result.err(),
        };
        self.publish(MessageBody::CommandAck(ack.clone()));
        if command == CommandKind::Close && !self.finished {
            self.status.lock().unwrap().phase = Phase::Closed;
            self.publish(MessageBody::End(EndMessage { reason: EndReason::Closed, outcome: None, detail: None }));
        }
        ack
    }

    fn advance(&mut self, steps: usize) {
        for _ in 0..steps {
            if self.finished {
                break;
            }
            let action = scripted_policy(&self.step.observation, &self.policy).action;
            match self.env.step(&action) {
                Ok(step) => self.step = step,
                Err(e) => {
                    self.finished = true;
                    self.status.lock().unwrap().phase = Phase::Finished;
                    self.publish(MessageBody::End(EndMessage {
                        reason: EndReason::Failed,
                        outcome: None,
                        detail: Some(e.to_string()),
                    }));
                    return;
                }
            }
            self.flush_events();
            let step = self.step.clone();
            self.observe(&step);
            if step.info.step % self.config.state_every.max(1) == 0 || step.done() {
                self.publish_state();
            }
            if step.done() {
                self.finish();
            }
        }
        self.update_status();
    }

    fn observe(&mut self, step: &EnvStep) {
        if let Some(r) = self.recorder.as_mut() {
            r.observe(&mut self.env, step);
        }
    }

    fn finish(&mut self) {
        self.finished = true;
        if let Some(r) = self.recorder.take() {
            self.record = Some(r.finish(&self.env, &self.step));
        }
        let outcome = self.record.as_ref().map(|r| r.outcome.clone());
        self.update_status();
        self.publish(MessageBody::End(EndMessage { reason: EndReason::Finished, outcome, detail: None }));
    }

    /// Moves pending environment events into the record and onto the stream.
    fn flush_events(&mut self) {
        let events = self.env.drain_events();
        let last_replan = events.iter().rposition(|e| matches!(e, EnvEvent::Replan { .. }));
        for (i, event) in events.into_iter().enumerate() {
            match &event {
                EnvEvent::Replan { step, trigger, plan, degraded } => {
                    if Some(i) == last_replan {
                        self.publish_prompt();
                    }
                    let msg = PlanMessage {
                        step: *step,
                        trigger: *trigger,
                        degraded: *degraded,
                        plan: plan.clone(),
                        target: self.env.target_label().map(str::to_string),
                    };
                    self.plan_seq = self.publish(MessageBody::Plan(msg));
                }
                other => {
                    self.publish(MessageBody::Event(EventMessage { event: other.clone() }));
                }
            }
            if let Some(r) = self.recorder.as_mut() {
                r.push_event(event);
            }
        }
    }

    fn publish_prompt(&mut self) {
        let Some(bundle) = self.env.last_prompt() else { return };
        if self.last_prompt.as_ref() == Some(bundle) {
            return;
        }
        let msg = PromptMessage {
            step: self.env.step_index(),
            context: bundle.context.clone(),
            pools: bundle.pools.clone(),
            user_text: bundle.user_text(),
        };
        self.last_prompt = Some(bundle.clone());
        self.publish(MessageBody::Prompt(msg));
    }

    fn publish_state(&mut self) {
        let scene = self.env.scene();
        let edge = self.config.mask_edge;
        let factor = MaskGrid::factor(scene, edge);
        let target = self.env.target_label();
        let info = &self.step.info;
        let frame = StateFrame {
            step: info.step,
            active: info.active,
            spawned: info.spawned,
            remaining: if info.spawned == 0 { 0.0 } else { info.active as f64 / info.spawned as f64 },
            tool: info.tool,
            suction: info.suction,
            target: target.map(str::to_string),
            plan_seq: self.plan_seq,
            paused: self.paused,
            done: self.step.done(),
            pools: self.env.pools().iter().map(|p| FramePool::of(p, scene, factor, target)).collect(),
            mask: MaskGrid::of(scene, edge),
        };
        self.publish(MessageBody::State(frame));
    }

    fn publish(&self, body: MessageBody) -> u64 {
        let seq = self.hub.publish(body);
        self.status.lock().unwrap().last_seq = seq;
        seq
    }

    fn update_status(&self) {
        let mut s = self.status.lock().unwrap();
        let info = &self.step.info;
        s.phase = if self.finished {
            Phase::Finished
        } else if self.paused {
            Phase::Paused
        } else {
            Phase::Running
        };
        s.step = info.step;
        s.active = info.active;
        s.remaining = if info.spawned == 0 { 0.0 } else { info.active as f64 / info.spawned as f64 };
        s.target = self.env.target_label().map(str::to_string);
        s.plan = Some(self.env.plan().clone());
        s.context = self.env.context().map(str::to_string);
    }
}
