use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::fluid::ToolAction;

/// Terminal bonus for clearing all blood.
pub const C1: f64 = 5.0;
/// Weight on the action norm.
pub const C2: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub removed: i64,
    pub terminal_bonus: f64,
    pub action_penalty: f64,
    pub total: f64,
}

impl RewardTerms {
    pub const ZERO: RewardTerms = RewardTerms { removed: 0, terminal_bonus: 0.0, action_penalty: 0.0, total: 0.0 };
}

/// Per-step reward from the active particle count before and after the step.
///
/// `n_before` counts particles emitted during the step, so `removed` is what
/// the tool actually captured.
pub fn compute_reward(n_before: i64, n_after: i64, action: &ToolAction) -> Result<RewardTerms, ControlError> {
    if n_before < 0 || n_after < 0 {
        return Err(ControlError::Contract(format!("negative particle count ({n_before}, {n_after})")));
    }
    let removed = n_before - n_after;
    let terminal_bonus = if n_after == 0 { C1 } else { 0.0 };
    let action_penalty = C2 * action.norm();
    Ok(RewardTerms { removed, terminal_bonus, action_penalty, total: removed as f64 + terminal_bonus - action_penalty })
}
