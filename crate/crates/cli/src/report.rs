use serde::Serialize;
use ssb_core::harness::{AttackOutcome, Feasibility};
use ssb_core::mitigation::MitigationId;
use ssb_core::sif::ClassificationRow;

use crate::config::{Scenario, SimConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Scenario report. Contains no timestamps or paths, so equal configs give
/// byte-identical JSON.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: u32,
    pub scenario: Scenario,
    pub success: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub config: SimConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<AttackOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<ClassificationRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feasibility: Option<Vec<FeasibilityRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSummary>,
}

impl Report {
    pub fn new(config: &SimConfig, scenario: Scenario) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            scenario,
            success: true,
            reason: None,
            config: config.clone(),
            outcome: None,
            table: None,
            feasibility: None,
            sweep: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityRow {
    pub mitigation: MitigationId,
    pub entropy_bits: u32,
    pub per_attempt_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_attempts_in_window: Option<u64>,
    /// Kept as a string: 2^63 does not survive a round trip through most
    /// JSON readers.
    pub expected_attempts: String,
    pub expected_ms: f64,
    pub verdict: Feasibility,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub mitigation: MitigationId,
    pub runs: usize,
    pub successes: usize,
    pub mean_attempts: f64,
    /// One outcome per seed, in seed order.
    pub outcomes: Vec<AttackOutcome>,
}
