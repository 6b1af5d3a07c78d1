//! High-level reasoning: prompt assembly, reasoner backends, and parsing of
//! free-text answers into validated priority plans.

mod parse;
mod plan;
mod prompt;

pub use parse::{parse_plan, ParseError};
pub use plan::{plan, should_replan, Backend, LlmPlanner, PlanOutcome, ReasoningEvent};
pub use prompt::{build_prompt, PoolFacts, PromptBundle, Templates};

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasoningError {
    #[error("prompt needs at least one pool")]
    NoPools,
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("template directory {path}: {detail}")]
    Templates { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    LlmWoc,
    LlmWc,
    Rule,
    RuleClotFirst,
    Random,
    None,
    Operator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "labels", rename_all = "snake_case")]
pub enum PlanOrder {
    Ranked(Vec<String>),
    /// No high-level ordering: the controller sees every pool.
    FullMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityPlan {
    pub order: PlanOrder,
    #[serde(default)]
    pub rationales: BTreeMap<String, String>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

impl PriorityPlan {
    pub fn ranked(labels: Vec<String>, provenance: Provenance) -> Self {
        Self { order: PlanOrder::Ranked(labels), rationales: BTreeMap::new(), provenance, raw_response: None }
    }

    pub fn no_reasoning() -> Self {
        Self {
            order: PlanOrder::FullMask,
            rationales: BTreeMap::new(),
            provenance: Provenance::None,
            raw_response: None,
        }
    }

    pub fn labels(&self) -> &[String] {
        match &self.order {
            PlanOrder::Ranked(l) => l,
            PlanOrder::FullMask => &[],
        }
    }

    pub fn is_full_mask(&self) -> bool {
        matches!(self.order, PlanOrder::FullMask)
    }

    /// Labels must be distinct members of `known`; only the NONE provenance
    /// may carry the full-mask sentinel.
    pub fn validate(&self, known: &[String]) -> Result<(), ReasoningError> {
        match &self.order {
            PlanOrder::FullMask if self.provenance == Provenance::None => Ok(()),
            PlanOrder::FullMask => {
                Err(ReasoningError::InvalidPlan("full-mask sentinel without NONE provenance".into()))
            }
            PlanOrder::Ranked(labels) => {
                let known: HashSet<&str> = known.iter().map(String::as_str).collect();
                let mut seen = HashSet::new();
                for l in labels {
                    if !known.contains(l.as_str()) {
                        return Err(ReasoningError::InvalidPlan(format!("unknown label {l}")));
                    }
                    if !seen.insert(l.as_str()) {
                        return Err(ReasoningError::InvalidPlan(format!("duplicate label {l}")));
                    }
                }
                if labels.is_empty() {
                    return Err(ReasoningError::InvalidPlan("empty ordering".into()));
                }
                Ok(())
            }
        }
    }
}
