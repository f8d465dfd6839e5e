//! `ssb` command-line driver: loads a [`SimConfig`], runs one scenario and
//! emits a versioned JSON report plus optional table and graph files.

pub mod config;
mod report;
mod scenario;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ssb_core::harness::HarnessError;
use ssb_core::mitigation::MitigationId;

pub use config::{Counter, Scenario, SimConfig, CONFIG_HELP};
pub use report::{FeasibilityRow, Report, SweepSummary, SCHEMA_VERSION};
pub use scenario::{run_scenario, write_outputs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("scenario failed: {0}")]
    Scenario(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Scenario(_) => 1,
            CliError::Config(_) | CliError::Io { .. } => 2,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::UnknownPlacement(_) | HarnessError::NotExecutable(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Scenario(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ssb", version, about = "Speculative shield bypass simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write its report.
    #[command(after_help = CONFIG_HELP)]
    Run(RunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Scenario to run.
    #[arg(long, value_enum)]
    pub scenario: Option<Scenario>,
    /// Seed for every random draw [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mitigation registry key, e.g. aslr, c3, arm-pa.
    #[arg(long, value_parser = parse_mitigation)]
    pub mitigation: Option<MitigationId>,
    /// Enable a countermeasure; repeatable.
    #[arg(long = "counter", value_enum)]
    pub counters: Vec<Counter>,
    /// TOML config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report path [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Classification table path; `.md` writes Markdown, anything else CSV.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Graphviz file for the target mitigation's flow graph.
    #[arg(long)]
    pub dot: Option<PathBuf>,
    /// Number of seeds for `sweep` [default: 8].
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Worker threads for `sweep` [default: 4].
    #[arg(long)]
    pub threads: Option<usize>,
}

fn parse_mitigation(s: &str) -> Result<MitigationId, String> {
    MitigationId::from_key(s).ok_or_else(|| {
        let keys: Vec<&str> = MitigationId::ALL.iter().map(|m| m.key()).collect();
        format!(
            "unknown mitigation {s:?}; expected one of {}",
            keys.join(", ")
        )
    })
}

impl RunArgs {
    /// Load the config file, if any, and apply the flags on top.
    pub fn resolve(&self) -> Result<SimConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => SimConfig::load(path)?,
            None => SimConfig::default(),
        };
        if let Some(s) = self.scenario {
            cfg.scenario = Some(s);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(m) = self.mitigation {
            cfg.mitigation.name = Some(m);
        }
        for c in &self.counters {
            c.apply(&mut cfg.countermeasures);
        }
        if let Some(n) = self.seeds {
            cfg.sweep.seeds = n;
        }
        if let Some(n) = self.threads {
            cfg.sweep.threads = n;
        }
        let out = &mut cfg.output;
        out.report = self.out.clone().or(out.report.take());
        out.table = self.table.clone().or(out.table.take());
        out.dot = self.dot.clone().or(out.dot.take());
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Run a parsed command line. Returns the process exit code.
pub fn main_with(cli: Cli) -> u8 {
    let Command::Run(args) = cli.command;
    let result = args.resolve().and_then(|cfg| {
        let report = run_scenario(&cfg)?;
        write_outputs(&cfg, &report)?;
        Ok(report)
    });
    match result {
        Ok(report) if report.success => 0,
        Ok(report) => {
            eprintln!(
                "{} failed: {}",
                report.scenario.as_str(),
                report.reason.as_deref().unwrap_or("unsuccessful")
            );
            1
        }
        Err(e) => {
            eprintln!("ssb: {e}");
            e.exit_code()
        }
    }
}
