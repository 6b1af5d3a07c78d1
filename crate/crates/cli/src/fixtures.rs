//! Checked-in LLM cassettes. They are artifact fixtures written by a
//! deterministic local responder, not recordings of a real model: the
//! responder reads the pool lines and context out of each prompt and answers
//! in one of several LLM-like formats.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use regex::Regex;
use suction_core::harness::scenario::{generate_scenario_with, ScenarioOptions};
use suction_core::harness::{run_episode, LlmBinding, ReasoningModule, RunOptions};
use suction_core::llm::{load_cassette, Cassette, ChatRequest, LlmClient, LlmError, RateLimiter, Transport};

pub const FIXTURE_MODEL: &str = "fixture-responder";
pub const FIXTURE_NOTE: &str = "artifact fixture: synthetic responder";
pub const CORPUS_CASSETTE: &str = "corpus.json";
pub const TOOL_CASSETTE: &str = "tool_adjacent.json";

/// Scenes a cassette covers.
#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub file: &'static str,
    pub envs: Vec<u8>,
    pub seeds: Vec<u64>,
    pub modules: Vec<ReasoningModule>,
    pub distractor_tool: bool,
}

impl FixtureSet {
    pub fn corpus() -> Self {
        Self {
            file: CORPUS_CASSETTE,
            envs: vec![1, 2, 3, 4],
            seeds: (500..510).collect(),
            modules: vec![ReasoningModule::LlmWithoutContext, ReasoningModule::LlmWithContext],
            distractor_tool: false,
        }
    }

    pub fn tool_adjacent() -> Self {
        Self {
            file: TOOL_CASSETTE,
            envs: vec![1],
            seeds: (700..710).collect(),
            modules: vec![ReasoningModule::LlmWithoutContext],
            distractor_tool: true,
        }
    }

    pub fn scenario_options(&self) -> ScenarioOptions {
        ScenarioOptions { distractor_tool: self.distractor_tool, ..ScenarioOptions::default() }
    }
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("cassettes")
}

/// Replay binding over a cassette file.
pub fn replay_binding(path: &Path) -> Result<LlmBinding> {
    let cassette = load_cassette(path)?;
    Ok(LlmBinding { client: Arc::new(LlmClient::replay(&cassette)), model: FIXTURE_MODEL.into() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPool {
    pub label: String,
    pub size_rank: usize,
    pub bleeding: bool,
    pub clot: bool,
    pub tool_adjacent: bool,
}

/// Pool lines and operator context read back out of a user message.
pub fn read_prompt(user: &str) -> (Vec<PromptPool>, Option<String>) {
    let line = Regex::new(
        r"(?m)^- (P\d+): size rank (\d+) of \d+ \(\d+ cells\); active bleeding: (yes|no); blood clot: (yes|no); surgical tool adjacent: (yes|no)$",
    )
    .expect("pool line regex");
    let pools = line
        .captures_iter(user)
        .map(|c| PromptPool {
            label: c[1].to_string(),
            size_rank: c[2].parse().unwrap_or(usize::MAX),
            bleeding: &c[3] == "yes",
            clot: &c[4] == "yes",
            tool_adjacent: &c[5] == "yes",
        })
        .collect();
    let context = user.lines().find_map(|l| l.strip_prefix("Context from the surgical team: ")).map(str::to_string);
    (pools, context)
}

/// Bleeding pools first and then by size. With a context that mentions
/// clots, clot pools go last; without one the clot pool follows the
/// bleeding pools.
pub fn intended_order(pools: &[PromptPool], context: Option<&str>) -> Vec<String> {
    let clot_last = context.is_some_and(|c| c.to_ascii_lowercase().contains("clot"));
    let mut sorted: Vec<&PromptPool> = pools.iter().collect();
    sorted.sort_by_key(|p| {
        let clot_rank = match (clot_last, p.clot && !p.bleeding) {
            (true, true) => 1,
            (false, true) => 0,
            _ if clot_last => 0,
            _ => 1,
        };
        (!p.bleeding, clot_rank, p.size_rank)
    });
    sorted.into_iter().map(|p| p.label.clone()).collect()
}

fn reason(p: &PromptPool) -> &'static str {
    match (p.bleeding, p.clot, p.tool_adjacent, p.size_rank) {
        (true, ..) => "active bleeding, it keeps growing",
        (_, true, ..) => "holds a clot, so flow there has stopped",
        (_, _, true, _) => "the surgical tool lies right beside it, approach carefully",
        (.., 1) => "largest volume of blood",
        _ => "smaller pool",
    }
}

fn number(label: &str) -> &str {
    label.trim_start_matches('P')
}

fn prose(order: &[String]) -> String {
    match order {
        [] => "No pools need suction.".into(),
        [only] => format!("Suction {only}."),
        [first, mid @ .., last] => {
            let mut s = format!("Start with {first}");
            for l in mid {
                s.push_str(&format!(", then {l}"));
            }
            s.push_str(&format!(", and finally {last}."));
            s
        }
    }
}

/// An LLM-style answer in one of eight formats picked by `style`.
pub fn respond(pools: &[PromptPool], order: &[String], style: u8) -> String {
    let by_label: HashMap<&str, &PromptPool> = pools.iter().map(|p| (p.label.as_str(), p)).collect();
    let why = |l: &String| by_label.get(l.as_str()).map_or("", |p| reason(p));
    let numbered =
        |bold: bool| {
            order
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    if bold {
                        format!("{}. **{l}** - {}", i + 1, why(l))
                    } else {
                        format!("{}. {l} - {}", i + 1, why(l))
                    }
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
    match style % 8 {
        0 => format!("Priority order:\n{}", numbered(false)),
        1 => format!("Recommended order: {}.", order.join(", ")),
        2 => format!("**Priority:**\n{}", numbered(true)),
        3 => prose(order),
        4 => order.join(" -> "),
        5 => {
            let names: Vec<String> = order.iter().map(|l| format!("Pool {}", number(l))).collect();
            match names.split_last() {
                Some((last, rest)) if !rest.is_empty() => {
                    format!("Order of suction: {} and finally {last}.", rest.join(", "))
                }
                _ => format!("Order of suction: {}.", names.join("")),
            }
        }
        6 => {
            let mut notes = Vec::new();
            for p in pools {
                if p.size_rank == 1 {
                    notes.push(format!("{} holds the most blood", p.label));
                }
                if p.bleeding {
                    notes.push(format!("{} is actively bleeding", p.label));
                }
                if p.clot {
                    notes.push(format!("{} contains a clot", p.label));
                }
                if p.tool_adjacent {
                    notes.push(format!("the surgical tool rests next to {}", p.label));
                }
            }
            let discussion = if notes.is_empty() {
                "The pools look similar.".to_string()
            } else {
                format!("Looking at the image, {}.", notes.join("; "))
            };
            format!("{discussion}\n\nFinal order:\n{}", numbered(false))
        }
        _ => {
            let lines: Vec<String> = order.iter().map(|l| format!("- {l}: {}", why(l))).collect();
            format!("Suggested sequence:\n{}", lines.join("\n"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Answer {
    known: Vec<String>,
    expected: Vec<String>,
}

/// Transport answering from the prompt alone; remembers what it meant.
#[derive(Default, Clone)]
pub struct FixtureResponder {
    answers: Arc<Mutex<HashMap<String, Answer>>>,
}

impl Transport for FixtureResponder {
    fn send(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let (pools, context) = read_prompt(&request.user);
        if pools.is_empty() {
            return Err(LlmError::Malformed("prompt lists no pools".into()));
        }
        let order = intended_order(&pools, context.as_deref());
        let fingerprint = request.fingerprint();
        let style = u8::from_str_radix(&fingerprint[..2], 16).unwrap_or(0);
        let known = pools.iter().map(|p| p.label.clone()).collect();
        self.answers.lock().unwrap().insert(fingerprint, Answer { known, expected: order.clone() });
        Ok(respond(&pools, &order, style))
    }
}

/// Fields stored in a fixture entry's note.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureNote {
    pub env: u8,
    pub seed: u64,
    pub module: ReasoningModule,
    pub known: Vec<String>,
    pub expected: Vec<String>,
}

impl FixtureNote {
    pub fn render(&self) -> String {
        format!(
            "{FIXTURE_NOTE}; env={}; seed={}; module={}; known={}; expected={}",
            self.env,
            self.seed,
            self.module,
            self.known.join(","),
            self.expected.join(",")
        )
    }

    pub fn parse(note: &str) -> Result<Self> {
        let mut fields = HashMap::new();
        let mut parts = note.split("; ");
        if parts.next() != Some(FIXTURE_NOTE) {
            bail!("not a fixture note: {note:?}");
        }
        for part in parts {
            let (k, v) = part.split_once('=').with_context(|| format!("bad note field {part:?}"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().with_context(|| format!("note lacks {k}"));
        let list = |v: &str| v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
        Ok(Self {
            env: get("env")?.parse()?,
            seed: get("seed")?.parse()?,
            module: get("module")?.parse()?,
            known: list(get("known")?),
            expected: list(get("expected")?),
        })
    }
}

/// Runs every episode of `set` against the responder and collects the
/// exchanges, each annotated with its scene and intended order.
pub fn record(set: &FixtureSet) -> Result<Cassette> {
    let mut out = Cassette::default();
    for &env in &set.envs {
        for &seed in &set.seeds {
            let scenario = generate_scenario_with(env, seed, &set.scenario_options())?;
            for &module in &set.modules {
                let responder = FixtureResponder::default();
                let client = LlmClient::recording(
                    Box::new(responder.clone()),
                    RateLimiter::new(u32::MAX, 1e9),
                    Cassette::default(),
                );
                let binding = LlmBinding { client: Arc::new(client), model: FIXTURE_MODEL.into() };
                let opts = RunOptions { llm: Some(binding.clone()), ..RunOptions::default() };
                let rec = run_episode(&scenario, module, &opts)?;
                if rec.outcome.tainted {
                    bail!("env {env} seed {seed} {module}: responder answer was not accepted");
                }
                let answers = responder.answers.lock().unwrap();
                for mut entry in binding.client.recorded().expect("recording client").entries {
                    if out.get(&entry.fingerprint).is_some() {
                        continue;
                    }
                    let a = &answers[&entry.fingerprint];
                    let note = FixtureNote { env, seed, module, known: a.known.clone(), expected: a.expected.clone() };
                    entry.note = Some(note.render());
                    entry.latency_ms = 0;
                    out.push(entry)?;
                }
            }
        }
    }
    Ok(out)
}

/// Rewrites both cassettes under `dir`.
pub fn write_all(dir: &Path) -> Result<Vec<(PathBuf, usize)>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for set in [FixtureSet::corpus(), FixtureSet::tool_adjacent()] {
        let cassette = record(&set)?;
        let path = dir.join(set.file);
        cassette.save(&path)?;
        written.push((path, cassette.entries.len()));
    }
    Ok(written)
}
