use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{ExceptionKind, MachineState};
use crate::mitigation::CheckPlacement;
use crate::Va;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Committed,
    Squashed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEvent {
    pub line_addr: Va,
    pub set: usize,
    pub hit: bool,
    pub latency: u64,
}

/// Outcome of the security check evaluated for one op.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub pass: bool,
    pub kind: ExceptionKind,
    pub placement: CheckPlacement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub pc: Va,
    pub op: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub addr: Option<Va>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_event: Option<CacheEvent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckRecord>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub substituted: bool,
}

impl TraceEvent {
    pub fn is_labelled(&self, label: &str) -> bool {
        self.label.as_deref() == Some(label)
    }
}

/// Record of one speculation window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecWindow {
    pub id: u64,
    pub trigger_pc: Va,
    pub predicted_taken: bool,
    pub resolved: bool,
    pub correct: bool,
    /// Indices into the trace's event list.
    pub issued_ops: Vec<usize>,
    pub deferred_exceptions: Vec<(usize, ExceptionKind)>,
    pub arch_hash_at_open: u64,
    pub arch_hash_at_resolve: u64,
    pub cache_lines_at_open: Vec<u64>,
    pub cache_lines_at_resolve: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashReport {
    pub kind: ExceptionKind,
    pub pc: Va,
    pub cycle: u64,
    /// True when the exception was recorded speculatively and raised when
    /// the faulting op reached the head of the reorder buffer.
    pub deferred: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub events: Vec<TraceEvent>,
    pub windows: Vec<SpecWindow>,
    pub crash: Option<CrashReport>,
    pub hijacked: bool,
    /// Attached by [`super::execute`]; runs on a long-lived machine leave it
    /// out to avoid copying memory per run.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_state: Option<MachineState>,
}

impl ExecutionTrace {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn labelled<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a TraceEvent> + 'a {
        self.events.iter().filter(move |e| e.is_labelled(label))
    }
}
