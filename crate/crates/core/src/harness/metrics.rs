use serde::{Deserialize, Serialize};

use super::record::EpisodeRecord;

/// Per-episode timing and path metrics, in steps and meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// First step the bleeding pool's own particles (initial and emitted)
    /// are all gone; `None` without an emitter or if never reached.
    pub t_ab: Option<usize>,
    pub t_50: Option<usize>,
    pub t_95: Option<usize>,
    pub ttpl: f64,
    /// Every threshold that applies was reached.
    pub completed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "T_AB")]
    TAb,
    #[serde(rename = "T_50")]
    T50,
    #[serde(rename = "T_95")]
    T95,
    #[serde(rename = "TTPL")]
    Ttpl,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [MetricKind::TAb, MetricKind::T50, MetricKind::T95, MetricKind::Ttpl];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::TAb => "T_AB",
            MetricKind::T50 => "T_50",
            MetricKind::T95 => "T_95",
            MetricKind::Ttpl => "TTPL",
        }
    }
}

impl Metrics {
    pub fn get(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::TAb => self.t_ab.map(|v| v as f64),
            MetricKind::T50 => self.t_50.map(|v| v as f64),
            MetricKind::T95 => self.t_95.map(|v| v as f64),
            MetricKind::Ttpl => Some(self.ttpl),
        }
    }
}

/// First sample step whose remaining fraction is at most `num / den`,
/// compared in integers.
fn crossing(record: &EpisodeRecord, num: usize, den: usize) -> Option<usize> {
    record.samples.iter().find(|s| s.active * den <= s.spawned * num).map(|s| s.step)
}

pub fn compute_metrics(record: &EpisodeRecord) -> Metrics {
    let t_50 = crossing(record, 1, 2);
    let t_95 = crossing(record, 1, 20);
    let bleeding = record.header.bleeding_pool;
    let t_ab = bleeding
        .and_then(|b| record.samples.iter().find(|s| s.origin_active.get(b).is_some_and(|&n| n == 0)).map(|s| s.step));
    let ttpl = record
        .samples
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].tool, w[1].tool);
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt()
        })
        .sum();
    let completed = t_50.is_some() && t_95.is_some() && (bleeding.is_none() || t_ab.is_some());
    Metrics { t_ab, t_50, t_95, ttpl, completed }
}

/// Step at which each scenario pool's own particles first all disappear.
pub fn clearance_steps(record: &EpisodeRecord) -> Vec<Option<usize>> {
    (0..record.header.pools)
        .map(|p| record.samples.iter().find(|s| s.origin_active.get(p).is_some_and(|&n| n == 0)).map(|s| s.step))
        .collect()
}

/// Scenario pools sorted by clearance step; pools never cleared come last
/// in index order.
pub fn clearance_order(record: &EpisodeRecord) -> Vec<usize> {
    let steps = clearance_steps(record);
    let mut order: Vec<usize> = (0..steps.len()).collect();
    order.sort_by_key(|&p| (steps[p].unwrap_or(usize::MAX), p));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::record::{RecordHeader, RecordOutcome, ScenarioRef, StepSample, RECORD_SCHEMA_VERSION};
    use crate::harness::ReasoningModule;

    fn record(
        series: &[(usize, usize)],
        tools: &[[f64; 3]],
        origin: &[Vec<u32>],
        bleeding: Option<usize>,
    ) -> EpisodeRecord {
        EpisodeRecord {
            header: RecordHeader {
                schema_version: RECORD_SCHEMA_VERSION,
                module: ReasoningModule::Rule,
                scenario: ScenarioRef { environment: 1, seed: 0, distractor_tool: false, fingerprint: String::new() },
                pools: origin.first().map_or(0, Vec::len),
                bleeding_pool: bleeding,
                clot_pool: None,
                initial_particles: series[0].1,
                dt: 0.02,
                step_budget: 100,
            },
            samples: series
                .iter()
                .enumerate()
                .map(|(i, &(active, spawned))| StepSample {
                    step: i,
                    active,
                    spawned,
                    remaining: active as f64 / spawned as f64,
                    tool: tools[i.min(tools.len() - 1)],
                    target: None,
                    suction: false,
                    reward: 0.0,
                    origin_active: origin.get(i).cloned().unwrap_or_default(),
                })
                .collect(),
            plans: vec![],
            events: vec![],
            outcome: RecordOutcome { terminated: false, truncated: true, tainted: false, steps: series.len() - 1 },
        }
    }

    #[test]
    fn first_crossing() {
        let r = record(&[(10, 10), (6, 10), (5, 10), (2, 10)], &[[0.0; 3]], &[], None);
        let m = compute_metrics(&r);
        assert_eq!(m.t_50, Some(2));
        assert_eq!(m.t_95, None);
        assert!(!m.completed);
        assert_eq!(m.ttpl, 0.0);
    }

    #[test]
    fn ttpl_sums_segments() {
        let tools = [[0.0, 0.0, 0.0], [0.003, 0.004, 0.0], [0.003, 0.004, 0.0], [0.003, 0.004, 0.012]];
        let r = record(&[(4, 4), (2, 4), (1, 4), (0, 4)], &tools, &[], None);
        let m = compute_metrics(&r);
        assert!((m.ttpl - 0.017).abs() < 1e-15);
        assert_eq!((m.t_50, m.t_95), (Some(1), Some(3)));
        assert!(m.completed);
    }

    #[test]
    fn bleeding_extinction_and_clearance() {
        let origin = vec![vec![3, 2], vec![3, 0], vec![0, 1], vec![0, 0]];
        let r = record(&[(5, 5), (3, 5), (1, 6), (0, 6)], &[[0.0; 3]], &origin, Some(1));
        let m = compute_metrics(&r);
        assert_eq!(m.t_ab, Some(1));
        assert_eq!(clearance_steps(&r), vec![Some(2), Some(1)]);
        assert_eq!(clearance_order(&r), vec![1, 0]);
    }
}
