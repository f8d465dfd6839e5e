//! Speculative shield bypass attacks: the victim process, the leak and
//! probe primitives, and the end-to-end proofs of concept.

mod budget;
mod pocs;
mod primitives;
mod process;
pub mod victim;

use serde::{Deserialize, Serialize};

use crate::mitigation::{CheckPlacement, MitigationId};
use crate::sim::{CrashReport, MachineConfig, SimError};

pub use budget::{EntropyBudget, Feasibility, PER_ATTEMPT_MS};
pub use pocs::{
    c3_find_synonym, c3_probe_misses, poc_aos, poc_c3, poc_canary, probe_attack, Variant,
    C3_BASELINE_MISSES, C3_SYNONYM_MISSES,
};
pub use primitives::{
    brute_force_secret, run_gadget, transient_crash_probe, transient_dereference_leak, BruteForce,
    GuessOrder, Inference,
};
pub use process::{Secrets, VictimProcess};
pub use victim::{GadgetInputs, GadgetShape, VictimTemplate};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    /// A sequentially placed check stopped the transient load.
    #[error("the mitigation's guard blocked the transient access")]
    GuardBlocked,
    /// The gadget ran but nothing reached the receiver.
    #[error("no cache signal observed")]
    NoSignal,
    #[error("receiver saw {0} candidate lines")]
    Ambiguous(usize),
    #[error("{0} needs a configured check placement")]
    UnknownPlacement(MitigationId),
    #[error("{0} has no executable model")]
    NotExecutable(MitigationId),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Knobs shared by every scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub seed: u64,
    pub machine: MachineConfig,
    pub per_attempt_ms: f64,
    /// Shrink brute-force spaces (ASLR offsets, C3 address bits, allocation
    /// tags) to 12 bits.
    pub test_scale: bool,
    /// Probability that a timed probe reads the wrong way.
    pub noise: Option<f64>,
    pub pac_bits: u32,
    /// Overrides the secret's entropy where the model allows it.
    pub entropy_bits: Option<u32>,
    pub rerandomize_interval_ms: Option<f64>,
    /// Overrides the placement of configurable check units (MTE).
    pub placement: Option<CheckPlacement>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            machine: MachineConfig::default(),
            per_attempt_ms: PER_ATTEMPT_MS,
            test_scale: true,
            noise: None,
            pac_bits: 16,
            entropy_bits: None,
            rerandomize_interval_ms: None,
            placement: None,
        }
    }
}

impl AttackConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub const TEST_ENTROPY_BITS: u32 = 12;
}

fn hex_bytes<S: serde::Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
    let text: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
    s.serialize_str(&text)
}

/// Result of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackOutcome {
    pub scenario: String,
    pub mitigation: MitigationId,
    pub seed: u64,
    /// Little-endian bytes of the recovered secret.
    #[serde(rename = "leaked", serialize_with = "hex_bytes")]
    pub leaked_secret: Vec<u8>,
    pub attempts: u64,
    pub probe_iterations: u64,
    #[serde(rename = "crashes")]
    pub crashes_observed: u64,
    pub wall_model_ms: f64,
    pub hijacked: bool,
    pub feasibility: Feasibility,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// The final architectural run's crash, if it had one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crash: Option<CrashReport>,
}

impl AttackOutcome {
    pub fn leaked_u64(&self) -> u64 {
        let mut buf = [0u8; 8];
        let n = self.leaked_secret.len().min(8);
        buf[..n].copy_from_slice(&self.leaked_secret[..n]);
        u64::from_le_bytes(buf)
    }
}
