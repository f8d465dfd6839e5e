//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use ssb_core::cache::CacheGeometry;
use ssb_core::harness::{AttackConfig, PER_ATTEMPT_MS};
use ssb_core::mitigation::{CheckPlacement, MitigationId};
use ssb_core::sim::{Countermeasures, MachineConfig, NestedBranchPolicy};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Scenario {
    PocCanary,
    PocC3,
    PocAos,
    Classify,
    Feasibility,
    Sweep,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::PocCanary => "poc_canary",
            Scenario::PocC3 => "poc_c3",
            Scenario::PocAos => "poc_aos",
            Scenario::Classify => "classify",
            Scenario::Feasibility => "feasibility",
            Scenario::Sweep => "sweep",
        }
    }

    /// The mitigation a proof of concept is written against.
    pub fn fixed_mitigation(self) -> Option<MitigationId> {
        match self {
            Scenario::PocCanary => Some(MitigationId::StackCanary),
            Scenario::PocC3 => Some(MitigationId::C3),
            Scenario::PocAos => Some(MitigationId::Aos),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Counter {
    InvisibleSpec,
    ParallelizeChecks,
    ModuloFetchAslr,
}

impl Counter {
    pub fn apply(self, cm: &mut Countermeasures) {
        match self {
            Counter::InvisibleSpec => cm.invisible_spec = true,
            Counter::ParallelizeChecks => cm.parallelize_checks = true,
            Counter::ModuloFetchAslr => cm.modulo_fetch_aslr = true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MitigationParams {
    pub name: Option<MitigationId>,
    pub pac_bits: u32,
    pub entropy_bits: Option<u32>,
    pub rerandomize_interval_ms: Option<f64>,
    /// Needed by check units whose placement is undocumented (MTE).
    pub placement: Option<CheckPlacement>,
}

impl Default for MitigationParams {
    fn default() -> Self {
        Self {
            name: None,
            pac_bits: 16,
            entropy_bits: None,
            rerandomize_interval_ms: None,
            placement: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachineParams {
    pub max_window: usize,
    pub train_count: u32,
    pub nested_branch: NestedBranchPolicy,
    pub step_limit: u64,
}

impl Default for MachineParams {
    fn default() -> Self {
        let m = MachineConfig::default();
        Self {
            max_window: m.max_window,
            train_count: m.train_count,
            nested_branch: m.nested_branch,
            step_limit: m.step_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackParams {
    pub per_attempt_ms: f64,
    pub test_scale: bool,
    pub noise: Option<f64>,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            per_attempt_ms: PER_ATTEMPT_MS,
            test_scale: true,
            noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub seeds: u64,
    pub threads: usize,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            seeds: 8,
            threads: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub report: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub dot: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub scenario: Option<Scenario>,
    pub mitigation: MitigationParams,
    pub cache: CacheGeometry,
    pub machine: MachineParams,
    pub countermeasures: Countermeasures,
    pub attack: AttackParams,
    pub sweep: SweepParams,
    /// Not part of the report: the same run written to two paths should
    /// produce identical reports.
    #[serde(skip_serializing)]
    pub output: OutputPaths,
}

/// Text shown under `--help`.
pub const CONFIG_HELP: &str = "\
Config file (TOML, unknown keys rejected; command-line flags win):

  seed = 0
  scenario = \"poc_canary\"   # poc_canary | poc_c3 | poc_aos | classify | feasibility | sweep

  [mitigation]
  name = \"aslr\"             # registry key, e.g. stack-canary, c3, aos, arm-pa, morpheus
  pac_bits = 16
  entropy_bits = 12         # optional override
  rerandomize_interval_ms = 50.0
  placement = \"sequential_guard\"   # sequential_guard | value_substitute | parallel

  [cache]
  num_sets = 64
  ways = 8
  line_bytes = 64
  hit_latency = 4
  miss_latency = 100

  [machine]
  max_window = 64
  train_count = 64
  nested_branch = \"stall\"   # stall | error
  step_limit = 1000000

  [countermeasures]
  invisible_spec = false
  parallelize_checks = false
  modulo_fetch_aslr = false

  [attack]
  per_attempt_ms = 2.69
  test_scale = true         # 12-bit brute-force spaces
  noise = 0.01              # optional flip probability

  [sweep]
  seeds = 8
  threads = 4

  [output]
  report = \"report.json\"
  table = \"table.csv\"       # .md for Markdown
  dot = \"graph.dot\"

Exit codes: 0 success, 1 scenario failed, 2 configuration error.";

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let err = |m: String| Err(CliError::Config(m));
        self.machine_config().validate().map_err(CliError::Config)?;
        let a = &self.attack;
        if !(a.per_attempt_ms > 0.0 && a.per_attempt_ms.is_finite()) {
            return err("attack.per_attempt_ms must be positive".into());
        }
        if let Some(q) = a.noise {
            if !(0.0..=0.5).contains(&q) {
                return err(format!("attack.noise {q} outside [0, 0.5]"));
            }
        }
        let m = &self.mitigation;
        if !(1..=16).contains(&m.pac_bits) {
            return err(format!("mitigation.pac_bits {} outside 1..=16", m.pac_bits));
        }
        if let Some(n) = m.entropy_bits {
            if !(1..=64).contains(&n) {
                return err(format!("mitigation.entropy_bits {n} outside 1..=64"));
            }
        }
        if let Some(w) = m.rerandomize_interval_ms {
            if !(w > 0.0 && w.is_finite()) {
                return err("mitigation.rerandomize_interval_ms must be positive".into());
            }
        }
        if self.sweep.seeds == 0 || self.sweep.threads == 0 {
            return err("sweep.seeds and sweep.threads must be at least 1".into());
        }
        let Some(scenario) = self.scenario else {
            return err("no scenario given".into());
        };
        if let (Some(fixed), Some(name)) = (scenario.fixed_mitigation(), m.name) {
            if fixed != name {
                return err(format!(
                    "{} runs against {fixed}, not {name}",
                    scenario.as_str()
                ));
            }
        }
        // Simulated scenarios sweep the whole space; keep it small enough to
        // finish and to fit the pointer layouts.
        if let (Some(n), true) = (m.entropy_bits, scenario != Scenario::Feasibility) {
            if n > 16 {
                return err(format!(
                    "mitigation.entropy_bits {n} is too large to simulate (max 16)"
                ));
            }
            if self.target() == Some(MitigationId::C3) && n % 2 != 0 {
                return err(format!("C3 address bits must be even, got {n}"));
            }
        }
        Ok(())
    }

    pub fn machine_config(&self) -> MachineConfig {
        MachineConfig {
            seed: self.seed,
            cache: self.cache,
            max_window: self.machine.max_window,
            train_count: self.machine.train_count,
            nested_branch: self.machine.nested_branch,
            step_limit: self.machine.step_limit,
            countermeasures: self.countermeasures,
        }
    }

    pub fn attack_config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            seed,
            machine: MachineConfig {
                seed,
                ..self.machine_config()
            },
            per_attempt_ms: self.attack.per_attempt_ms,
            test_scale: self.attack.test_scale,
            noise: self.attack.noise,
            pac_bits: self.mitigation.pac_bits,
            entropy_bits: self.mitigation.entropy_bits,
            rerandomize_interval_ms: self.mitigation.rerandomize_interval_ms,
            placement: self.mitigation.placement,
        }
    }

    /// Mitigation the run targets: the scenario's own, else the configured
    /// one.
    pub fn target(&self) -> Option<MitigationId> {
        self.scenario
            .and_then(Scenario::fixed_mitigation)
            .or(self.mitigation.name)
    }
}
