//! Scenario generation, batch episodes across reasoning modules, metrics,
//! statistics and report emission.

mod batch;
mod metrics;
mod module;
mod record;
mod report;
pub mod scenario;
mod stats;

pub use batch::{run_batch, BatchSpec};
pub use metrics::{clearance_order, clearance_steps, compute_metrics, MetricKind, Metrics};
pub use module::{reasoner_for, LlmBinding, ReasoningModule};
pub use record::{
    run_episode, run_prepared, EpisodeRecord, PlanEntry, RecordHeader, RecordLine, RecordOutcome, Recorder, RunOptions,
    ScenarioRef, StepSample, RECORD_SCHEMA_VERSION,
};
pub use report::{
    emit_report, load_records, plot_remaining, read_metrics_csv, remaining_band, report_dir, write_metrics_csv,
    write_run, ReportBundle, METRICS_CSV, RECORDS_DIR, SUMMARY_CSV, SUMMARY_JSON, TABLE_TXT,
};
pub use stats::{
    aggregate, compare_modules, mean_std, MetricRow, MetricStat, Summary, SummaryCell, WelchTest, MIN_SAMPLES,
};

use std::path::Path;

use thiserror::Error;

use crate::control::ControlError;
use scenario::ScenarioError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("record: {0}")]
    Record(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(String),
    #[error("plot: {0}")]
    Plot(String),
    #[error("statistics: {0}")]
    Stats(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }
}
