//! Live-session gateway: runs one episode per session on its own thread and
//! exposes it over HTTP commands and a WebSocket message stream.

pub mod protocol;
mod server;
mod session;

use std::time::Duration;

use suction_core::harness::LlmBinding;
use suction_core::reasoning::Templates;

pub use server::{router, serve, AppState};

/// JSON Schema of every request body and stream message.
pub const PROTOCOL_SCHEMA: &str = include_str!("../schema/session-protocol.schema.json");

#[derive(Clone)]
pub struct ServiceConfig {
    /// Sessions that may be paused or running at once.
    pub capacity: usize,
    /// Wall-clock tick rate of running sessions in live mode.
    pub steps_per_second: f64,
    /// Steps only advance through the advance endpoint.
    pub lockstep: bool,
    /// A state message goes out every this many steps.
    pub state_every: usize,
    /// Interval of heartbeat messages while paused.
    pub heartbeat: Duration,
    /// Longest edge of the streamed mask grid.
    pub mask_edge: usize,
    pub templates: Templates,
    pub llm: Option<LlmBinding>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            capacity: 1,
            steps_per_second: 50.0,
            lockstep: false,
            state_every: 5,
            heartbeat: Duration::from_secs(1),
            mask_edge: 32,
            templates: Templates::default(),
            llm: None,
        }
    }
}

impl ServiceConfig {
    pub fn lockstep() -> Self {
        Self { lockstep: true, ..Self::default() }
    }
}
