use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{parse_plan, PoolFacts, PriorityPlan, PromptBundle, Provenance};
use crate::llm::{ChatRequest, ImagePart, LlmClient, LlmError};
use crate::perception::{label_number, PoolObservation};

/// Something a backend wants recorded alongside its plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ReasoningEvent {
    TransportRetry {
        attempt: usize,
        error: String,
    },
    ParseRetry {
        attempt: usize,
        error: String,
    },
    /// The LLM path failed; the rule ordering was used instead.
    Degraded {
        reason: String,
    },
    Anomaly {
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub plan: PriorityPlan,
    pub events: Vec<ReasoningEvent>,
    pub degraded: bool,
}

impl PlanOutcome {
    fn clean(plan: PriorityPlan) -> Self {
        Self { plan, events: Vec::new(), degraded: false }
    }
}

/// LLM-backed planning with transport retries, parse retries, and rule fallback.
pub struct LlmPlanner {
    pub client: Arc<LlmClient>,
    pub model: String,
    pub system: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout: Duration,
    /// Attempts per request before giving up on the transport.
    pub transport_attempts: usize,
    /// Extra requests sent after an unparseable answer.
    pub parse_retries: usize,
    /// Upper bound on any single backoff sleep.
    pub max_backoff: Duration,
}

impl LlmPlanner {
    pub fn new(client: Arc<LlmClient>, model: impl Into<String>, system: impl Into<String>) -> Self {
        Self {
            client,
            model: model.into(),
            system: system.into(),
            max_tokens: 600,
            temperature: 0.0,
            timeout: Duration::from_secs(60),
            transport_attempts: 3,
            parse_retries: 2,
            max_backoff: Duration::from_secs(30),
        }
    }

    /// Request for a bundle; retries carry an extra formatting reminder so
    /// they fingerprint differently from the first attempt.
    pub fn request(&self, bundle: &PromptBundle, attempt: usize) -> ChatRequest {
        let mut user = bundle.user_text();
        if attempt > 0 {
            user.push_str(&format!(
                "\n(Attempt {}: list the pool labels in priority order as a numbered list.)\n",
                attempt + 1
            ));
        }
        let mut req = ChatRequest::new(&self.model, &self.system, user);
        req.temperature = self.temperature;
        req.max_tokens = self.max_tokens;
        req.timeout = self.timeout;
        if let Some(png) = &bundle.image {
            req = req.with_image(ImagePart::png(png));
        }
        req
    }

    fn call(&self, req: &ChatRequest, events: &mut Vec<ReasoningEvent>) -> Result<String, LlmError> {
        let mut last = None;
        for attempt in 0..self.transport_attempts.max(1) {
            match self.client.complete(req) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && attempt + 1 < self.transport_attempts => {
                    events.push(ReasoningEvent::TransportRetry { attempt, error: e.to_string() });
                    let wait = e.retry_after().unwrap_or(Duration::from_millis(250 << attempt.min(6)));
                    std::thread::sleep(wait.min(self.max_backoff));
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or(LlmError::Transport("no attempts made".into())))
    }

    fn plan(&self, bundle: &PromptBundle) -> PlanOutcome {
        let provenance = if bundle.context.is_some() { Provenance::LlmWc } else { Provenance::LlmWoc };
        let known = bundle.known_labels();
        let mut events = Vec::new();
        for attempt in 0..=self.parse_retries {
            let req = self.request(bundle, attempt);
            let text = match self.call(&req, &mut events) {
                Ok(t) => t,
                Err(e) => return degrade(bundle, events, format!("transport: {e}")),
            };
            match parse_plan(&text, &known) {
                Ok(mut plan) => {
                    plan.provenance = provenance;
                    return PlanOutcome { plan, events, degraded: false };
                }
                Err(e) => events.push(ReasoningEvent::ParseRetry { attempt, error: e.to_string() }),
            }
        }
        degrade(bundle, events, "no parseable answer".into())
    }
}

fn degrade(bundle: &PromptBundle, mut events: Vec<ReasoningEvent>, reason: String) -> PlanOutcome {
    events.push(ReasoningEvent::Degraded { reason });
    let mut fallback = rule_outcome(&bundle.pools, false);
    events.append(&mut fallback.events);
    PlanOutcome { plan: fallback.plan, events, degraded: true }
}

pub enum Backend {
    /// Bleeding first, clot pools last, larger pools before smaller.
    Rule,
    /// Bleeding first, then clot pools, then larger before smaller.
    RuleClotFirst,
    Random,
    None,
    Llm(LlmPlanner),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Rule => "rule",
            Backend::RuleClotFirst => "rule-clot-first",
            Backend::Random => "random",
            Backend::None => "none",
            Backend::Llm(_) => "llm",
        }
    }
}

fn rule_outcome(pools: &[PoolFacts], clot_first: bool) -> PlanOutcome {
    let mut sorted: Vec<&PoolFacts> = pools.iter().collect();
    sorted.sort_by(|a, b| {
        let clot_key = |p: &PoolFacts| if clot_first { !p.clot } else { p.clot && !p.bleeding };
        b.bleeding
            .cmp(&a.bleeding)
            .then(clot_key(a).cmp(&clot_key(b)))
            .then(b.area.cmp(&a.area))
            .then(a.label.cmp(&b.label))
    });
    let provenance = if clot_first { Provenance::RuleClotFirst } else { Provenance::Rule };
    let mut outcome =
        PlanOutcome::clean(PriorityPlan::ranked(sorted.iter().map(|p| p.label.clone()).collect(), provenance));
    for p in pools.iter().filter(|p| p.bleeding && p.clot) {
        outcome.events.push(ReasoningEvent::Anomaly {
            detail: format!("{} is both bleeding and clotted; ranked as bleeding", p.label),
        });
    }
    outcome
}

/// Produces a plan for `bundle`. `seed` drives the RANDOM permutation.
pub fn plan(backend: &Backend, bundle: &PromptBundle, seed: u64) -> PlanOutcome {
    match backend {
        Backend::Rule => rule_outcome(&bundle.pools, false),
        Backend::RuleClotFirst => rule_outcome(&bundle.pools, true),
        Backend::Random => {
            let mut labels = bundle.known_labels();
            labels.sort_by_key(|l| label_number(l));
            labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            PlanOutcome::clean(PriorityPlan::ranked(labels, Provenance::Random))
        }
        Backend::None => PlanOutcome::clean(PriorityPlan::no_reasoning()),
        Backend::Llm(planner) => planner.plan(bundle),
    }
}

/// True when a pool appeared, a surviving pool's flags changed, or the
/// operator acted.
pub fn should_replan(previous: &[PoolObservation], current: &[PoolObservation], operator_event: bool) -> bool {
    if operator_event {
        return true;
    }
    current.iter().any(|c| match previous.iter().find(|p| p.label == c.label) {
        None => true,
        Some(p) => p.flags() != c.flags(),
    })
}
