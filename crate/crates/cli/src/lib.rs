pub mod fixtures;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use suction_core::harness::scenario::{generate_scenario_with, ScenarioConfig, ScenarioOptions};
use suction_core::harness::{
    report_dir, run_batch, run_episode, write_run, BatchSpec, EpisodeRecord, LlmBinding, ReasoningModule, ReportBundle,
    RunOptions,
};
use suction_core::llm::{load_cassette, Cassette, HttpTransport, LlmClient, RateLimiter};
use suction_service::ServiceConfig;

#[derive(Debug, Parser)]
#[command(name = "suction", version, about = "Autonomous blood suction experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a batch of episodes and write records plus the report.
    Run(RunArgs),
    /// Rebuild the report of an earlier run from its records.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Serve interactive sessions over HTTP and WebSocket.
    Serve(ServeArgs),
    /// Write a generated scenario as TOML.
    Scenario {
        #[arg(long)]
        env: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        distractor_tool: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate the checked-in LLM cassettes.
    Fixtures {
        #[arg(long, default_value_os_t = fixtures::fixture_dir())]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LlmMode {
    Live,
    Replay,
}

#[derive(Debug, Clone, Args)]
pub struct LlmArgs {
    #[arg(long, value_enum)]
    pub llm: Option<LlmMode>,
    /// Replay source, or where a live run records its exchanges.
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    #[arg(long, default_value = "gpt-4o")]
    pub model: String,
    #[arg(long, default_value = "https://api.openai.com/v1")]
    pub base_url: String,
    /// Live requests per second.
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// 1-4, a comma list, or "all".
    #[arg(long, default_value = "all", value_parser = parse_envs)]
    pub env: Envs,
    #[arg(long, value_delimiter = ',', default_value = "rule,rr,nr", value_parser = parse_module)]
    pub module: Vec<ReasoningModule>,
    #[arg(long, default_value_t = 100)]
    pub scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub distractor_tool: bool,
    /// Run this scenario file instead of generated scenes.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[command(flatten)]
    pub llm: LlmArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = 1)]
    pub capacity: usize,
    /// Steps advance only through the advance endpoint.
    #[arg(long)]
    pub lockstep: bool,
    #[arg(long, default_value_t = 50.0)]
    pub steps_per_second: f64,
    #[command(flatten)]
    pub llm: LlmArgs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envs(pub Vec<u8>);

fn parse_envs(s: &str) -> Result<Envs, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Envs(vec![1, 2, 3, 4]));
    }
    s.split(',')
        .map(|p| match p.trim().parse::<u8>() {
            Ok(e @ 1..=4) => Ok(e),
            _ => Err(format!("environment must be 1-4 or all, got {p:?}")),
        })
        .collect::<Result<_, _>>()
        .map(Envs)
}

fn parse_module(s: &str) -> Result<ReasoningModule, String> {
    s.parse().map_err(|e| format!("{e}"))
}

/// Client for `--llm`, or `None` when no LLM is requested.
pub fn llm_binding(args: &LlmArgs) -> Result<Option<LlmBinding>> {
    let client = match args.llm {
        None => return Ok(None),
        Some(LlmMode::Replay) => {
            let path = args.cassette.as_deref().context("--llm replay needs --cassette")?;
            LlmClient::replay(&load_cassette(path)?)
        }
        Some(LlmMode::Live) => {
            let transport = Box::new(HttpTransport::from_env(args.base_url.clone()));
            let limiter = RateLimiter::new(1, args.rate);
            if args.cassette.is_some() {
                LlmClient::recording(transport, limiter, Cassette::default())
            } else {
                LlmClient::live(transport, limiter)
            }
        }
    };
    Ok(Some(LlmBinding { client: Arc::new(client), model: args.model.clone() }))
}

/// Records of a `run` invocation, in batch order.
pub fn run_records(args: &RunArgs, opts: &RunOptions) -> Result<Vec<EpisodeRecord>> {
    if let Some(path) = &args.scenario {
        let scenario = ScenarioConfig::load(path)?;
        return args.module.iter().map(|&m| Ok(run_episode(&scenario, m, opts)?)).collect();
    }
    let mut spec = BatchSpec::new(args.env.0.clone(), args.module.clone(), args.scenes, args.seed);
    spec.scenario = ScenarioOptions { distractor_tool: args.distractor_tool, ..ScenarioOptions::default() };
    Ok(run_batch(&spec, opts)?)
}

pub fn run(args: &RunArgs) -> Result<ReportBundle> {
    let llm = llm_binding(&args.llm)?;
    if llm.is_none() {
        if let Some(m) = args.module.iter().find(|m| m.needs_llm()) {
            bail!("module {m} needs --llm live or --llm replay --cassette PATH");
        }
    }
    let opts = RunOptions { llm: llm.clone(), ..RunOptions::default() };
    let records = run_records(args, &opts)?;
    let bundle = write_run(&records, &args.out)?;
    if let (Some(binding), Some(path), Some(LlmMode::Live)) = (&llm, &args.llm.cassette, args.llm.llm) {
        if let Some(cassette) = binding.client.recorded() {
            cassette.save(path)?;
            log::info!("recorded {} exchanges to {}", cassette.entries.len(), path.display());
        }
    }
    Ok(bundle)
}

fn print_table(bundle: &ReportBundle) -> Result<()> {
    let table =
        std::fs::read_to_string(&bundle.table).with_context(|| format!("reading {}", bundle.table.display()))?;
    print!("{table}");
    Ok(())
}

pub fn write_scenario(env: u8, seed: u64, distractor_tool: bool, out: &Path) -> Result<()> {
    let opts = ScenarioOptions { distractor_tool, ..ScenarioOptions::default() };
    generate_scenario_with(env, seed, &opts)?.save(out)?;
    Ok(())
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        capacity: args.capacity,
        lockstep: args.lockstep,
        steps_per_second: args.steps_per_second,
        llm: llm_binding(&args.llm)?,
        ..ServiceConfig::default()
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await?;
        log::info!("listening on http://{}", listener.local_addr()?);
        suction_service::serve(listener, config).await?;
        Ok(())
    })
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => print_table(&run(&args)?),
        Command::Report { input } => print_table(&report_dir(&input)?),
        Command::Serve(args) => serve(&args),
        Command::Scenario { env, seed, distractor_tool, out } => write_scenario(env, seed, distractor_tool, &out),
        Command::Fixtures { out } => {
            for (path, n) in fixtures::write_all(&out)? {
                println!("{}: {n} entries", path.display());
            }
            Ok(())
        }
    }
}
