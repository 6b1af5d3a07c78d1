//! Wire types. Every payload is JSON; `schema/session-protocol.schema.json`
//! describes the same shapes for clients.

use serde::{Deserialize, Serialize};
use suction_core::control::{EnvEvent, ReplanTrigger};
use suction_core::harness::{ReasoningModule, RecordOutcome};
use suction_core::perception::{BinaryMask, PoolObservation, Rect};
use suction_core::reasoning::{PoolFacts, PriorityPlan};

pub const PROTOCOL_VERSION: u32 = 1;

/// One message on a session stream. `seq` strictly increases per session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub body: MessageBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "kebab-case")]
pub enum MessageBody {
    State(StateFrame),
    Plan(PlanMessage),
    Prompt(PromptMessage),
    Event(EventMessage),
    CommandAck(CommandAck),
    Heartbeat(Heartbeat),
    End(EndMessage),
}

impl MessageBody {
    pub fn kind(&self) -> &'static str {
        match self {
            MessageBody::State(_) => "state",
            MessageBody::Plan(_) => "plan",
            MessageBody::Prompt(_) => "prompt",
            MessageBody::Event(_) => "event",
            MessageBody::CommandAck(_) => "command-ack",
            MessageBody::Heartbeat(_) => "heartbeat",
            MessageBody::End(_) => "end",
        }
    }
}

/// Scene frame: pool sidecar plus a downsampled occupancy grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub step: usize,
    pub active: usize,
    pub spawned: usize,
    pub remaining: f64,
    pub tool: [f64; 3],
    pub suction: bool,
    pub target: Option<String>,
    /// Sequence number of the plan message this frame was produced under.
    pub plan_seq: u64,
    pub paused: bool,
    pub done: bool,
    pub pools: Vec<FramePool>,
    pub mask: MaskGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePool {
    pub label: String,
    /// `[x0, y0, x1, y1]` in `mask` cells, inclusive.
    pub box_cells: [usize; 4],
    pub bbox: Rect,
    pub area: usize,
    pub centroid: [f64; 2],
    pub bleeding: bool,
    pub clot: bool,
    pub tool_adjacent: bool,
    pub target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskGrid {
    pub rows: usize,
    pub cols: usize,
    /// `[min_x, min_y, max_x, max_y]` in meters.
    pub extent: [f64; 4],
    /// One '0'/'1' string per row, first row lowest y.
    pub data: Vec<String>,
}

impl MaskGrid {
    /// Cell-block reduction factor used by [`MaskGrid::of`].
    pub fn factor(mask: &BinaryMask, max_edge: usize) -> usize {
        mask.rows().max(mask.cols()).div_ceil(max_edge.max(1)).max(1)
    }

    pub fn of(mask: &BinaryMask, max_edge: usize) -> Self {
        let small = mask.downsample(max_edge);
        let e = mask.extent();
        Self {
            rows: small.rows(),
            cols: small.cols(),
            extent: [e.min_x, e.min_y, e.max_x, e.max_y],
            data: small.to_rows(),
        }
    }
}

impl FramePool {
    pub fn of(pool: &PoolObservation, scene: &BinaryMask, factor: usize, target: Option<&str>) -> Self {
        let cols = scene.cols();
        let mut b = [usize::MAX, usize::MAX, 0, 0];
        for &i in &pool.cells {
            let (r, c) = (i as usize / cols / factor, i as usize % cols / factor);
            b = [b[0].min(c), b[1].min(r), b[2].max(c), b[3].max(r)];
        }
        if pool.cells.is_empty() {
            b = [0; 4];
        }
        Self {
            label: pool.label.clone(),
            box_cells: b,
            bbox: pool.bbox,
            area: pool.area,
            centroid: pool.centroid,
            bleeding: pool.bleeding,
            clot: pool.clot,
            tool_adjacent: pool.tool_adjacent,
            target: target == Some(pool.label.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMessage {
    pub step: usize,
    pub trigger: ReplanTrigger,
    pub degraded: bool,
    pub plan: PriorityPlan,
    pub target: Option<String>,
}

/// Echo of the prompt bundle behind the next plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMessage {
    pub step: usize,
    pub context: Option<String>,
    pub pools: Vec<PoolFacts>,
    pub user_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMessage {
    pub event: EnvEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Context,
    Plan,
    Pause,
    Resume,
    Advance,
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandAck {
    pub command_id: u64,
    pub command: CommandKind,
    pub ok: bool,
    /// Episode step after the command was applied.
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub step: usize,
    pub paused: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Finished,
    Closed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndMessage {
    pub reason: EndReason,
    pub outcome: Option<RecordOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    CapacityExceeded,
    InvalidRequest,
    EmptyContext,
    UnknownLabels,
    Finished,
    Paused,
    NotLockstep,
    Internal,
}

impl ErrorCode {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::NotFound => 404,
            ErrorCode::CapacityExceeded | ErrorCode::Finished | ErrorCode::Paused | ErrorCode::NotLockstep => 409,
            ErrorCode::InvalidRequest | ErrorCode::EmptyContext => 400,
            ErrorCode::UnknownLabels => 422,
            ErrorCode::Internal => 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    /// Live pool labels, for unknown-label rejections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_labels: Option<Vec<String>>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), known_labels: None }
    }
}

/// Error body of non-command endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ApiError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub environment: u8,
    pub seed: u64,
    pub module: ReasoningModule,
    #[serde(default)]
    pub distractor_tool: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceRequest {
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Paused,
    Running,
    Finished,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub id: String,
    pub protocol_version: u32,
    pub environment: u8,
    pub seed: u64,
    pub module: ReasoningModule,
    pub phase: Phase,
    pub lockstep: bool,
    pub step: usize,
    pub active: usize,
    pub remaining: f64,
    pub target: Option<String>,
    pub plan: Option<PriorityPlan>,
    pub context: Option<String>,
    pub last_seq: u64,
}
