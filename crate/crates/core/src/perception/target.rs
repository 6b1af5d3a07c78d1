use super::{BinaryMask, PerceptionError, PoolObservation};
use crate::reasoning::{PlanOrder, PriorityPlan};

/// What the mask sensor exposes to the controller this step.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMask {
    /// Pool being worked on; `None` when the full scene is exposed.
    pub label: Option<String>,
    pub mask: BinaryMask,
}

/// Cells of the first planned pool that still exists, or the whole scene for
/// the no-reasoning sentinel.
pub fn target_mask(
    scene: &BinaryMask,
    pools: &[PoolObservation],
    plan: &PriorityPlan,
) -> Result<TargetMask, PerceptionError> {
    match &plan.order {
        PlanOrder::FullMask => Ok(TargetMask { label: None, mask: scene.clone() }),
        PlanOrder::Ranked(labels) => {
            let pool = labels
                .iter()
                .find_map(|l| pools.iter().find(|p| &p.label == l))
                .ok_or(PerceptionError::PlanExhausted)?;
            let mut mask = scene.empty_like();
            for &i in &pool.cells {
                if scene.get_index(i as usize) {
                    mask.set_index(i as usize, true);
                }
            }
            Ok(TargetMask { label: Some(pool.label.clone()), mask })
        }
    }
}
