//! Episodic suction environment, its reward, and the scripted controller
//! standing in for a trained agent.

mod env;
mod policy;
mod reward;

pub use env::{
    label_origins, prepare_scene, EnvEvent, EnvOptions, EnvStep, Reasoner, ReplanTrigger, StepInfo, SuctionEnv,
};
pub use policy::{scripted_policy, PolicyConfig, PolicyOutput};
pub use reward::{compute_reward, RewardTerms, C1, C2};

use thiserror::Error;

use crate::perception::PerceptionError;
use crate::reasoning::ReasoningError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("simulation: {0}")]
    Simulation(String),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error("operator: {0}")]
    Operator(String),
    #[error("unknown or invalid labels {requested:?}; live pools are {known:?}")]
    UnknownLabels { requested: Vec<String>, known: Vec<String> },
}
