use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::control::Reasoner;
use crate::llm::LlmClient;
use crate::reasoning::{Backend, LlmPlanner, Templates};

/// High-level unit driving the mask sensor during an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReasoningModule {
    #[serde(rename = "rr")]
    Random,
    #[serde(rename = "nr")]
    None,
    #[serde(rename = "lrwoc")]
    LlmWithoutContext,
    #[serde(rename = "lrwc")]
    LlmWithContext,
    #[serde(rename = "rule")]
    Rule,
    #[serde(rename = "rule-clot-first")]
    RuleClotFirst,
}

impl ReasoningModule {
    pub const ALL: [ReasoningModule; 6] = [
        ReasoningModule::Random,
        ReasoningModule::None,
        ReasoningModule::LlmWithoutContext,
        ReasoningModule::LlmWithContext,
        ReasoningModule::Rule,
        ReasoningModule::RuleClotFirst,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ReasoningModule::Random => "rr",
            ReasoningModule::None => "nr",
            ReasoningModule::LlmWithoutContext => "lrwoc",
            ReasoningModule::LlmWithContext => "lrwc",
            ReasoningModule::Rule => "rule",
            ReasoningModule::RuleClotFirst => "rule-clot-first",
        }
    }

    /// Column heading used in summary tables.
    pub fn heading(self) -> &'static str {
        match self {
            ReasoningModule::Random => "RR",
            ReasoningModule::None => "NR",
            ReasoningModule::LlmWithoutContext => "LRWOC",
            ReasoningModule::LlmWithContext => "LRWC",
            ReasoningModule::Rule => "RULE",
            ReasoningModule::RuleClotFirst => "RULE-CLOT-FIRST",
        }
    }

    pub fn needs_llm(self) -> bool {
        matches!(self, ReasoningModule::LlmWithoutContext | ReasoningModule::LlmWithContext)
    }
}

impl fmt::Display for ReasoningModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ReasoningModule {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|m| m.tag() == lower)
            .ok_or_else(|| HarnessError::Config(format!("unknown module {s:?}")))
    }
}

/// A chat client shared by every LLM-backed episode of a run.
#[derive(Clone)]
pub struct LlmBinding {
    pub client: Arc<LlmClient>,
    pub model: String,
}

/// Reasoner for `module`. RANDOM permutations are seeded by `seed`; LRWC
/// carries the guideline as operator context from the first plan on.
pub fn reasoner_for(
    module: ReasoningModule,
    seed: u64,
    templates: &Templates,
    llm: Option<&LlmBinding>,
) -> Result<Reasoner, HarnessError> {
    let backend = match module {
        ReasoningModule::Random => Backend::Random,
        ReasoningModule::None => Backend::None,
        ReasoningModule::Rule => Backend::Rule,
        ReasoningModule::RuleClotFirst => Backend::RuleClotFirst,
        ReasoningModule::LlmWithoutContext | ReasoningModule::LlmWithContext => {
            let binding = llm.ok_or_else(|| {
                HarnessError::Config(format!("module {module} needs an LLM client (live or cassette replay)"))
            })?;
            Backend::Llm(LlmPlanner::new(binding.client.clone(), binding.model.clone(), templates.system.clone()))
        }
    };
    let mut reasoner = Reasoner::new(backend, seed);
    reasoner.templates = templates.clone();
    if module == ReasoningModule::LlmWithContext {
        reasoner = reasoner.with_context(templates.guideline.clone());
    }
    Ok(reasoner)
}
