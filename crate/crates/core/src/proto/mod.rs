//! GEO-coordinated entanglement distribution.
//!
//! A session walks a fixed sequence: a ground station asks a GEO node for
//! service over radio, the GEO node commands the best-placed LEO satellite,
//! the LEO satellite emits pairs down two optical downlinks, the stations
//! distill what survived, and finally teleport qubits across. Any
//! non-terminal stage may drop to `Failed`, which is absorbing.

mod pool;
mod sim;
mod trace;

use serde::Serialize;
use thiserror::Error;

use crate::engine::ScheduleError;

pub use pool::{
    distill, teleport, DistillOutcome, DistillationPolicy, EbitPool, FidelityClass, PoolEntry, TeleportOutcome,
};
pub use sim::{
    leo_distribute, DistributionBatch, NetworkConfig, ProtocolParams, Request, RunReport, RunSummary, SessionReport,
    Simulation, YieldSetting,
};
pub use trace::{write_jsonl, TraceRecord, TRACE_SUMMARY_EVENT};

pub type SessionId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FailureReason {
    NoCoordinator,
    NoSatellite,
    LinkLost,
    InsufficientEntanglement,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionState {
    Idle,
    Requested { a: u32, b: u32, t0: f64 },
    Coordinating { geo_id: u32 },
    Distributing { leo_id: u32, pairs_target: u64 },
    Distilling { raw_count: u64, rounds_remaining: u32 },
    Teleporting { qubits_remaining: u64 },
    Done { qubits_delivered: u64 },
    Failed { reason: FailureReason },
}

/// Position of each non-failure state in the protocol order.
pub const STAGE_ORDER: [&str; 7] = [
    "Idle",
    "Requested",
    "Coordinating",
    "Distributing",
    "Distilling",
    "Teleporting",
    "Done",
];

impl SessionState {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Idle => "Idle",
            Self::Requested { .. } => "Requested",
            Self::Coordinating { .. } => "Coordinating",
            Self::Distributing { .. } => "Distributing",
            Self::Distilling { .. } => "Distilling",
            Self::Teleporting { .. } => "Teleporting",
            Self::Done { .. } => "Done",
            Self::Failed { .. } => "Failed",
        }
    }

    fn stage(&self) -> Option<usize> {
        STAGE_ORDER.iter().position(|s| *s == self.name())
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Done { .. } | Self::Failed { .. })
    }

    /// Forward by exactly one stage, or to `Failed` from anything
    /// non-terminal.
    pub fn can_transition_to(&self, next: &SessionState) -> bool {
        if self.is_terminal() {
            return false;
        }
        match (self.stage(), next.stage()) {
            (_, None) => true,
            (Some(a), Some(b)) => b == a + 1,
            (None, _) => false,
        }
    }
}

/// Check a recorded sequence of state names against the protocol order.
pub fn is_valid_transition_path(states: &[&str]) -> bool {
    let stage = |s: &str| STAGE_ORDER.iter().position(|x| *x == s);
    states.windows(2).all(|w| match (stage(w[0]), w[1]) {
        (None, _) => false,
        (Some(6), _) => false,
        (Some(_), "Failed") => true,
        (Some(a), next) => stage(next) == Some(a + 1),
    }) && states.first().is_none_or(|s| *s == "Idle")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtoError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown station {0}")]
    UnknownStation(u32),
    #[error("unknown satellite {0}")]
    UnknownSatellite(u32),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: &'static str, to: &'static str },
    #[error("invalid distillation policy: {0}")]
    InvalidPolicy(String),
    #[error("insufficient entanglement: {raw_valid} valid raw pairs gave {distilled} ebits")]
    InsufficientEntanglement { raw_valid: u64, distilled: u64 },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("channel model: {0}")]
    Channel(String),
    #[error("engine: {0}")]
    Engine(String),
}
