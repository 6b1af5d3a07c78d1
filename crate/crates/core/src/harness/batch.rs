use rayon::prelude::*;

use super::module::ReasoningModule;
use super::record::{run_prepared, EpisodeRecord, RunOptions};
use super::scenario::{generate_scenario_with, ScenarioOptions};
use super::HarnessError;
use crate::control::prepare_scene;

/// Environments x scenes x modules; scene `i` uses seed `seed + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub envs: Vec<u8>,
    pub modules: Vec<ReasoningModule>,
    pub scenes: usize,
    pub seed: u64,
    pub scenario: ScenarioOptions,
}

impl BatchSpec {
    pub fn new(envs: Vec<u8>, modules: Vec<ReasoningModule>, scenes: usize, seed: u64) -> Self {
        Self { envs, modules, scenes, seed, scenario: ScenarioOptions::default() }
    }

    pub fn scene_seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.scenes as u64).map(|i| self.seed.wrapping_add(i))
    }
}

/// Runs every episode of the batch on the rayon pool. Each scene is settled
/// once and shared by its modules; records come back ordered by
/// environment, scene, then module as listed.
pub fn run_batch(spec: &BatchSpec, opts: &RunOptions) -> Result<Vec<EpisodeRecord>, HarnessError> {
    if spec.modules.iter().any(|m| m.needs_llm()) && opts.llm.is_none() {
        return Err(HarnessError::Config("LLM modules requested without a live client or cassette".into()));
    }
    let jobs: Vec<(u8, u64)> = spec.envs.iter().flat_map(|&e| spec.scene_seeds().map(move |s| (e, s))).collect();
    let per_scene: Vec<Vec<EpisodeRecord>> = jobs
        .par_iter()
        .map(|&(env, seed)| {
            let scenario = generate_scenario_with(env, seed, &spec.scenario)?;
            let sim = prepare_scene(&scenario)?;
            spec.modules
                .iter()
                .map(|&m| {
                    let record = run_prepared(&scenario, sim.clone(), m, opts)?;
                    log::info!("env {env} seed {seed} {m}: {} steps", record.outcome.steps);
                    Ok(record)
                })
                .collect::<Result<Vec<_>, HarnessError>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(per_scene.into_iter().flatten().collect())
}
