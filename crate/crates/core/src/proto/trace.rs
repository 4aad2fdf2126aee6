use std::io::{self, Write};

use serde::Serialize;
use serde_json::Value;

use super::SessionId;

/// Event name of the closing network-wide line of a trace.
pub const TRACE_SUMMARY_EVENT: &str = "summary";

/// One line of the JSON-lines trace: `{"t", "session_id", "event", "payload"}`.
///
/// `session_id` is `null` for network-wide records. Payload objects serialize
/// with sorted keys, so a trace is a pure function of the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: f64,
    pub session_id: Option<SessionId>,
    pub event: &'static str,
    pub payload: Value,
}

impl TraceRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace records are always serializable")
    }
}

pub fn write_jsonl<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    Ok(())
}
