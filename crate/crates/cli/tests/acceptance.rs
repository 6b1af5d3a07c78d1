//! Acceptance criteria, run in order by a plain `main`. Each prints one
//! `ACCEPT <name>: PASS|FAIL <detail>` line; any failure makes the process
//! exit non-zero. Arguments not starting with `-` filter criteria by name.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::Normal;
use suction_cli::fixtures::{self, FixtureNote, FixtureSet, FIXTURE_MODEL};
use suction_core::control::{compute_reward, scripted_policy, PolicyConfig, Reasoner, SuctionEnv, C1, C2};
use suction_core::fluid::ToolAction;
use suction_core::harness::scenario::{generate_scenario, generate_scenario_with};
use suction_core::harness::{
    clearance_order, compare_modules, compute_metrics, run_batch, run_episode, BatchSpec, EpisodeRecord, LlmBinding,
    MetricKind, ReasoningModule, RunOptions,
};
use suction_core::llm::{load_cassette, Cassette, ChatRequest, LlmClient, LlmError, RateLimiter, Transport};
use suction_core::perception::{label_components, BinaryMask};
use suction_core::reasoning::{parse_plan, Backend};
use suction_core::tissue::{bernstein_basis, evaluate_surface, generate_surface, Extent};

const ALPHA: f64 = 0.01;
/// Wall-clock budget for the Env 2 trend batch.
const ENV2_BUDGET: Duration = Duration::from_secs(600);
const ORACLE_TOL: f64 = 1e-12;
const CORPUS_MIN: f64 = 0.95;
const KS_MAX: f64 = 0.05;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Batch {
    records: Vec<EpisodeRecord>,
    elapsed: Duration,
}

impl Batch {
    fn run(env: u8, modules: &[ReasoningModule], scenes: usize) -> Self {
        let started = Instant::now();
        let spec = BatchSpec::new(vec![env], modules.to_vec(), scenes, 0);
        let records = run_batch(&spec, &RunOptions::default()).expect("batch runs");
        Self { records, elapsed: started.elapsed() }
    }

    fn of(&self, module: ReasoningModule) -> impl Iterator<Item = &EpisodeRecord> {
        self.records.iter().filter(move |r| r.header.module == module)
    }

    /// Metric values of `module`, plus how many episodes lacked one.
    fn metric(&self, module: ReasoningModule, kind: MetricKind) -> (Vec<f64>, usize) {
        let all: Vec<Option<f64>> = self.of(module).map(|r| compute_metrics(r).get(kind)).collect();
        let missing = all.iter().filter(|v| v.is_none()).count();
        (all.into_iter().flatten().collect(), missing)
    }
}

fn env1() -> &'static Batch {
    static B: OnceLock<Batch> = OnceLock::new();
    B.get_or_init(|| Batch::run(1, &[ReasoningModule::Rule, ReasoningModule::Random], 100))
}

fn env2() -> &'static Batch {
    static B: OnceLock<Batch> = OnceLock::new();
    B.get_or_init(|| Batch::run(2, &[ReasoningModule::Rule, ReasoningModule::Random, ReasoningModule::None], 100))
}

fn clot_batch(env: u8) -> Batch {
    Batch::run(env, &[ReasoningModule::Rule, ReasoningModule::RuleClotFirst], 50)
}

fn env4() -> &'static Batch {
    static B: OnceLock<Batch> = OnceLock::new();
    B.get_or_init(|| clot_batch(4))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn trend_env2_t_ab() -> Verdict {
    let b = env2();
    let (rule, rule_miss) = b.metric(ReasoningModule::Rule, MetricKind::TAb);
    let (rr, rr_miss) = b.metric(ReasoningModule::Random, MetricKind::TAb);
    let (nr, nr_miss) = b.metric(ReasoningModule::None, MetricKind::TAb);
    let vs_rr = compare_modules(&rule, &rr).unwrap();
    let vs_nr = compare_modules(&rule, &nr).unwrap();
    let pass = mean(&rule) < mean(&rr)
        && mean(&rule) < mean(&nr)
        && vs_rr.p < ALPHA
        && vs_nr.p < ALPHA
        && b.elapsed < ENV2_BUDGET;
    verdict(pass,
        format!(
            "RULE {:.1} (n={}, missing {rule_miss}) RR {:.1} (missing {rr_miss}) NR {:.1} (missing {nr_miss}); p_rr={:.2e} p_nr={:.2e} < {ALPHA}; {:.0}s < {}s",
            mean(&rule),
            rule.len(),
            mean(&rr),
            mean(&nr),
            vs_rr.p,
            vs_nr.p,
            b.elapsed.as_secs_f64(),
            ENV2_BUDGET.as_secs()
        ),
    )
}

fn trend_env1_t50() -> Verdict {
    let b = env1();
    let (rule, rule_miss) = b.metric(ReasoningModule::Rule, MetricKind::T50);
    let (rr, rr_miss) = b.metric(ReasoningModule::Random, MetricKind::T50);
    verdict(
        mean(&rule) < mean(&rr),
        format!(
            "RULE {:.1} (missing {rule_miss}) < RR {:.1} (missing {rr_miss}) over 100 scenes",
            mean(&rule),
            mean(&rr)
        ),
    )
}

fn clot_trend(b: &Batch) -> Verdict {
    let (last, last_miss) = b.metric(ReasoningModule::Rule, MetricKind::T50);
    let (first, first_miss) = b.metric(ReasoningModule::RuleClotFirst, MetricKind::T50);
    verdict(
        mean(&last) < mean(&first),
        format!(
            "clot last {:.1} (missing {last_miss}) < clot first {:.1} (missing {first_miss}) over 50 scenes",
            mean(&last),
            mean(&first)
        ),
    )
}

fn trend_env3_clot_last() -> Verdict {
    clot_trend(&clot_batch(3))
}

fn trend_env4_clot_last() -> Verdict {
    clot_trend(env4())
}

fn reward_oracle() -> Verdict {
    let mut runner = TestRunner::new(Config { cases: 10_000, failure_persistence: None, ..Config::default() });
    let strategy = (0i64..5000, 0i64..5000, -0.05f64..0.05, -0.05f64..0.05, -0.05f64..0.05);
    let result = runner.run(&strategy, |(before, after, dx, dy, dz)| {
        let action = ToolAction::new(dx, dy, dz);
        let got = compute_reward(before, after, &action).unwrap();
        let bonus = if after == 0 { 5.0 } else { 0.0 };
        let want = (before - after) as f64 + bonus - 0.02 * (dx * dx + dy * dy + dz * dz).sqrt();
        prop_assert!((got.total - want).abs() <= ORACLE_TOL, "{} vs {}", got.total, want);
        prop_assert_eq!(got.terminal_bonus, bonus);
        Ok(())
    });
    let constants = C1 == 5.0 && C2 == 0.02;
    let terminal = compute_reward(3, 0, &ToolAction::new(0.0, 0.0, 0.0)).unwrap().total == 8.0;
    verdict(
        result.is_ok() && constants && terminal,
        format!("10000 cases within {ORACLE_TOL:e}, C1={C1} C2={C2}; {result:?}"),
    )
}

fn bernstein_and_bezier_oracles() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut runner = TestRunner::new(Config { cases: 2000, failure_persistence: None, ..Config::default() });
    let result = runner.run(&(0usize..=10, 0.0f64..=1.0), |(n, x)| {
        let sum: f64 = (0..=n).map(|i| bernstein_basis(n, i, x).unwrap()).sum();
        prop_assert!((sum - 1.0).abs() <= ORACLE_TOL, "n={} x={} sum={}", n, x, sum);
        for i in 0..=n {
            let d = (bernstein_basis(n, i, x).unwrap() - bernstein_basis(n, n - i, 1.0 - x).unwrap()).abs();
            prop_assert!(d <= ORACLE_TOL, "n={} i={} x={} asym={}", n, i, x, d);
        }
        Ok(())
    });
    for n in 0..=10 {
        for k in 0..=100 {
            let x = k as f64 / 100.0;
            let sum: f64 = (0..=n).map(|i| bernstein_basis(n, i, x).unwrap()).sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    let extent = Extent::new(-0.1, -0.08, 0.1, 0.08);
    let mut corners_exact = true;
    for seed in 0..200u64 {
        let (n, m) = (1 + (seed % 8) as usize, 1 + (seed / 8 % 8) as usize);
        let s = generate_surface(seed, n, m, extent, 0.02).unwrap();
        for (u, v, i, j) in [(0.0, 0.0, 0, 0), (1.0, 0.0, n, 0), (0.0, 1.0, 0, m), (1.0, 1.0, n, m)] {
            corners_exact &= evaluate_surface(&s, u, v).unwrap() == s.control_point(i, j);
        }
    }
    verdict(result.is_ok() && worst <= ORACLE_TOL && corners_exact,
        format!("n<=10 unity/symmetry within {ORACLE_TOL:e} (grid worst {worst:.1e}); corners exact on 200 surfaces: {corners_exact}"),
    )
}

fn particle_ledger() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut failures = Vec::new();
    for episode in 0..50 {
        let env_id = rng.gen_range(1..=4);
        let seed = rng.gen_range(0..10_000);
        let backend = match rng.gen_range(0..4) {
            0 => Backend::Rule,
            1 => Backend::Random,
            2 => Backend::None,
            _ => Backend::RuleClotFirst,
        };
        let scenario = generate_scenario(env_id, seed).unwrap();
        let (mut env, mut step) = SuctionEnv::reset(&scenario, Reasoner::new(backend, seed)).unwrap();
        let policy = PolicyConfig::from_physics(&scenario.physics);
        let initial = env.state().ledger.initial;
        let (mut removed, mut emitted) = (0i64, 0usize);
        while !step.done() {
            step = env.step(&scripted_policy(&step.observation, &policy).action).unwrap();
            removed += step.reward.removed;
            emitted += step.info.emitted;
        }
        let active = env.state().active_count();
        let l = &env.state().ledger;
        let ok = removed as usize + active == initial + emitted
            && l.removed == removed as usize
            && l.emitted == emitted
            && initial == scenario.pools.iter().map(|p| p.particles).sum::<usize>();
        if !ok {
            failures.push(format!("#{episode} env{env_id} seed{seed}"));
        }
    }
    verdict(failures.is_empty(), format!("50 episodes, mismatches: {failures:?}"))
}

/// Breadth-first 8-connected flood fill over the set cells.
fn flood_fill(mask: &BinaryMask) -> BTreeSet<Vec<u32>> {
    let (rows, cols) = (mask.rows() as i64, mask.cols() as i64);
    let mut seen = vec![false; (rows * cols) as usize];
    let mut out = BTreeSet::new();
    for start in 0..rows * cols {
        if seen[start as usize] || !mask.get_index(start as usize) {
            continue;
        }
        let mut comp = vec![];
        let mut queue = VecDeque::from([start]);
        seen[start as usize] = true;
        while let Some(i) = queue.pop_front() {
            comp.push(i as u32);
            let (r, c) = (i / cols, i % cols);
            for (dr, dc) in (-1..=1).flat_map(|dr| (-1..=1).map(move |dc| (dr, dc))) {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= rows || cc >= cols {
                    continue;
                }
                let j = rr * cols + cc;
                if !seen[j as usize] && mask.get_index(j as usize) {
                    seen[j as usize] = true;
                    queue.push_back(j);
                }
            }
        }
        comp.sort_unstable();
        out.insert(comp);
    }
    out
}

fn connected_components_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (rows, cols) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
        let density = rng.gen_range(0.0..0.7);
        let bits = (0..rows * cols).map(|_| rng.gen_bool(density)).collect();
        let mask = BinaryMask::from_bits(rows, cols, Extent::default(), bits);
        let found: BTreeSet<Vec<u32>> = label_components(&mask).into_iter().collect();
        if found != flood_fill(&mask) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("1000 masks up to 64x64, {mismatches} mismatches"))
}

fn plan_ordering() -> Verdict {
    let mut env1_bad = Vec::new();
    for r in env1().of(ReasoningModule::Rule).take(50) {
        let scenario = generate_scenario(1, r.header.scenario.seed).unwrap();
        let (env, _) = SuctionEnv::reset(&scenario, Reasoner::new(Backend::Rule, 0)).unwrap();
        let origins = env.initial_origins();
        let planned: Vec<usize> = r.plans[0].plan.labels().iter().map(|l| origins[l] as usize).collect();
        if clearance_order(r) != planned {
            env1_bad.push(r.header.scenario.seed);
        }
    }
    let mut bleeding_bad = Vec::new();
    let mut checked = 0;
    for r in env2().of(ReasoningModule::Rule).chain(env4().of(ReasoningModule::Rule)) {
        let scenario = generate_scenario(r.header.scenario.environment, r.header.scenario.seed).unwrap();
        checked += 1;
        if clearance_order(r)[0] != scenario.emitters[0].pool {
            bleeding_bad.push((r.header.scenario.environment, r.header.scenario.seed));
        }
    }
    verdict(env1_bad.is_empty() && bleeding_bad.is_empty(),
        format!("Env1 plan order mismatches {env1_bad:?} of 50; bleeding not first {bleeding_bad:?} of {checked} Env2/4 scenes"),
    )
}

const FUZZ_SEEDS: &[&str] = &[
    "1. P2 (active bleeding) 2. P1 3. P3 4. P4",
    "Suction P3 first, then P1, then P2.",
    "Recommended order: P2, P1, P3, P4.",
    "**Priority:**\n1. **P2** - active bleeding\n2. **P1**\n3. **P3**",
    "P1 -> P3 -> P2 -> P4",
    "Order of suction: Pool 2, Pool 1 and finally Pool 4.",
    "nothing to do here",
];

fn mutate(rng: &mut ChaCha8Rng, text: &str) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    let alphabet: Vec<char> = "P0123456789 ,.;:-*#\n()>poolthené\u{0}\u{202e}🩸".chars().collect();
    for _ in 0..rng.gen_range(0..12) {
        match rng.gen_range(0..5) {
            0 if !chars.is_empty() => {
                let i = rng.gen_range(0..chars.len());
                chars.remove(i);
            }
            1 => {
                let i = rng.gen_range(0..=chars.len());
                chars.insert(i, alphabet[rng.gen_range(0..alphabet.len())]);
            }
            2 if !chars.is_empty() => chars.truncate(rng.gen_range(0..chars.len())),
            3 => {
                let bytes: Vec<u8> = (0..rng.gen_range(0..24)).map(|_| rng.gen()).collect();
                let at = rng.gen_range(0..=chars.len());
                chars.splice(at..at, String::from_utf8_lossy(&bytes).chars());
            }
            _ => chars.reverse(),
        }
    }
    chars.into_iter().collect()
}

fn parser_fuzz() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let (mut ok, mut typed, mut invalid, mut crashes) = (0, 0, 0, 0);
    for case in 0..10_000 {
        let text = mutate(&mut rng, FUZZ_SEEDS[case % FUZZ_SEEDS.len()]);
        let known: Vec<String> = (1..=rng.gen_range(1..=8)).map(|i| format!("P{i}")).collect();
        match std::panic::catch_unwind(|| parse_plan(&text, &known)) {
            Err(_) => crashes += 1,
            Ok(Ok(plan)) if plan.validate(&known).is_ok() => ok += 1,
            Ok(Ok(_)) => invalid += 1,
            Ok(Err(_)) => typed += 1,
        }
    }
    verdict(
        crashes == 0 && invalid == 0,
        format!("10000 cases: {ok} valid plans, {typed} typed errors, {invalid} invalid plans, {crashes} crashes"),
    )
}

fn parser_cassette_corpus() -> Verdict {
    let cassette = load_cassette(&fixtures::fixture_dir().join(fixtures::CORPUS_CASSETTE)).unwrap();
    let mut hits = 0;
    let mut misses = Vec::new();
    for entry in &cassette.entries {
        let note = FixtureNote::parse(entry.note.as_deref().unwrap_or_default()).unwrap();
        match parse_plan(&entry.response, &note.known) {
            Ok(plan) if plan.validate(&note.known).is_ok() && plan.labels() == note.expected.as_slice() => hits += 1,
            _ => misses.push(entry.fingerprint[..8].to_string()),
        }
    }
    let rate = hits as f64 / cassette.entries.len() as f64;
    verdict(
        !cassette.entries.is_empty() && rate >= CORPUS_MIN,
        format!(
            "{hits}/{} responses parsed to the intended order ({:.1}% >= {:.0}%); misses {misses:?}",
            cassette.entries.len(),
            rate * 100.0,
            CORPUS_MIN * 100.0
        ),
    )
}

/// Answers from a cassette like replay does, and keeps every prompt.
struct Capture {
    cassette: Cassette,
    prompts: Arc<Mutex<Vec<String>>>,
}

impl Transport for Capture {
    fn send(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.prompts.lock().unwrap().push(request.user.clone());
        let fp = request.fingerprint();
        self.cassette.get(&fp).map(|e| e.response.clone()).ok_or(LlmError::ReplayMiss { fingerprint: fp })
    }
}

fn tool_adjacent_replay() -> Verdict {
    let path = fixtures::fixture_dir().join(fixtures::TOOL_CASSETTE);
    let cassette = load_cassette(&path).unwrap();
    let set = FixtureSet::tool_adjacent();
    let replay = Arc::new(LlmClient::replay(&cassette));
    let mut problems = Vec::new();
    let mut scenes = 0;
    for &seed in &set.seeds {
        let scenario = generate_scenario_with(1, seed, &set.scenario_options()).unwrap();
        let prompts = Arc::new(Mutex::new(Vec::new()));
        let capture = Capture { cassette: cassette.clone(), prompts: prompts.clone() };
        let client = LlmClient::live(Box::new(capture), RateLimiter::new(u32::MAX, 1e9));
        let opts = RunOptions {
            llm: Some(LlmBinding { client: Arc::new(client), model: FIXTURE_MODEL.into() }),
            ..RunOptions::default()
        };
        let captured = run_episode(&scenario, ReasoningModule::LlmWithoutContext, &opts).unwrap();
        let opts = RunOptions {
            llm: Some(LlmBinding { client: replay.clone(), model: FIXTURE_MODEL.into() }),
            ..RunOptions::default()
        };
        let replayed = run_episode(&scenario, ReasoningModule::LlmWithoutContext, &opts).unwrap();
        scenes += 1;

        let flagged = prompts.lock().unwrap().iter().any(|p| p.contains("surgical tool adjacent: yes"));
        let valid = replayed
            .plans
            .iter()
            .all(|p| p.plan.labels().len() == p.plan.labels().iter().collect::<BTreeSet<_>>().len());
        if scenario.distractor_tool.is_none() || !flagged {
            problems.push(format!("seed {seed}: tool flag missing from prompts"));
        }
        if replayed.outcome.tainted || !valid || replayed.plans.iter().any(|p| p.degraded) {
            problems.push(format!("seed {seed}: plan fell back or did not validate"));
        }
        if replayed != captured {
            problems.push(format!("seed {seed}: replay diverged from captured run"));
        }
    }
    verdict(
        scenes == 10 && problems.is_empty() && replay.network_calls() == 0,
        format!("{scenes} scenes, {} network calls; problems {problems:?}", replay.network_calls()),
    )
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_suction"))
            .args([
                "run",
                "--env",
                "all",
                "--module",
                "rule,rr,nr,rule-clot-first",
                "--scenes",
                "2",
                "--seed",
                "40",
                "--out",
            ])
            .arg(&out)
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(status.success());
        files(&out)
    };
    let (a, b) = (run("a"), run("b"));
    let csv = a.keys().filter(|k| k.ends_with(".csv")).count();
    let records = a.keys().filter(|k| k.ends_with(".ndjson")).count();
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    verdict(
        a.len() == b.len() && differing.is_empty() && csv > 0 && records == 32,
        format!("{csv} CSV and {records} record files, {} files total; differing {differing:?}", a.len()),
    )
}

fn welch_calibration() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(100.0, 30.0).unwrap();
    let mut p: Vec<f64> = (0..1000)
        .map(|_| {
            let a: Vec<f64> = (0..30).map(|_| rng.sample(normal)).collect();
            let b: Vec<f64> = (0..30).map(|_| rng.sample(normal)).collect();
            compare_modules(&a, &b).unwrap().p
        })
        .collect();
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    let ks = p.iter().enumerate().map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n)).fold(0.0, f64::max);
    verdict(ks < KS_MAX, format!("KS distance {ks:.4} < {KS_MAX} over 1000 trials"))
}

type Criterion = (&'static str, fn() -> Verdict);

const CRITERIA: &[Criterion] = &[
    ("trend_env2_t_ab", trend_env2_t_ab),
    ("trend_env1_t50", trend_env1_t50),
    ("trend_env3_clot_last", trend_env3_clot_last),
    ("trend_env4_clot_last", trend_env4_clot_last),
    ("reward_oracle", reward_oracle),
    ("bernstein_and_bezier_oracles", bernstein_and_bezier_oracles),
    ("particle_ledger", particle_ledger),
    ("connected_components_oracle", connected_components_oracle),
    ("plan_ordering", plan_ordering),
    ("parser_fuzz", parser_fuzz),
    ("parser_cassette_corpus", parser_cassette_corpus),
    ("tool_adjacent_replay", tool_adjacent_replay),
    ("cli_determinism", cli_determinism),
    ("welch_calibration", welch_calibration),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for &(name, criterion) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let v = std::panic::catch_unwind(criterion).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!("ACCEPT {name}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed.push(name);
        }
    }
    println!("acceptance: {} passed, {} failed of {ran}", ran - failed.len(), failed.len());
    if !failed.is_empty() {
        println!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
