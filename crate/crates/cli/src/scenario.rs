use std::path::Path;

use ssb_core::harness::{
    poc_aos, poc_c3, poc_canary, probe_attack, AttackOutcome, GadgetShape, Variant, VictimProcess,
};
use ssb_core::mitigation::{registry, MitigationId};
use ssb_core::sif::{budget_for, build_graph_with, classify_all};

use crate::config::{Scenario, SimConfig};
use crate::report::{FeasibilityRow, Report, SweepSummary};
use crate::CliError;

/// Run the configured scenario. A scenario that runs but does not reach its
/// goal returns a report with `success == false`.
pub fn run_scenario(cfg: &SimConfig) -> Result<Report, CliError> {
    let scenario = cfg
        .scenario
        .ok_or_else(|| CliError::Config("no scenario given".into()))?;
    let mut report = Report::new(cfg, scenario);
    match scenario {
        Scenario::PocCanary | Scenario::PocC3 | Scenario::PocAos => {
            let id = scenario.fixed_mitigation().expect("poc has a mitigation");
            let out = attack(cfg, id, cfg.seed)?;
            report.success = succeeded(&out);
            report.reason = out.reason.clone();
            report.outcome = Some(out);
        }
        Scenario::Classify => {
            let table = classify_all(&registry(), cfg.attack.per_attempt_ms);
            report.table = Some(table.rows);
        }
        Scenario::Feasibility => report.feasibility = Some(feasibility(cfg)),
        Scenario::Sweep => {
            let summary = sweep(cfg)?;
            report.success = summary.successes == summary.runs;
            if !report.success {
                report.reason = Some(format!(
                    "{} of {} seeds failed",
                    summary.runs - summary.successes,
                    summary.runs
                ));
            }
            report.sweep = Some(summary);
        }
    }
    Ok(report)
}

/// Whether an attack outcome reached its goal: a hijack for the proofs of
/// concept, a recovered secret for the probe attacks.
fn succeeded(out: &AttackOutcome) -> bool {
    if out.scenario.starts_with("poc_") {
        out.hijacked
    } else {
        out.reason.is_none() && !out.leaked_secret.is_empty()
    }
}

fn attack(cfg: &SimConfig, id: MitigationId, seed: u64) -> Result<AttackOutcome, CliError> {
    let mut p = VictimProcess::new(id, &cfg.attack_config(seed))?;
    let out = match id {
        MitigationId::StackCanary => poc_canary(&mut p, Variant::Attack),
        MitigationId::C3 => poc_c3(&mut p, Variant::Attack),
        MitigationId::Aos => poc_aos(&mut p, Variant::Attack),
        _ => probe_attack(&mut p),
    }?;
    Ok(out)
}

fn feasibility(cfg: &SimConfig) -> Vec<FeasibilityRow> {
    let m = &cfg.mitigation;
    registry()
        .into_iter()
        .filter(|d| m.name.is_none_or(|n| n == d.id))
        .filter_map(|mut d| {
            if m.name.is_some() {
                if let (Some(n), Some(s)) = (m.entropy_bits, d.secret.as_mut()) {
                    s.entropy_bits = n;
                }
                if let Some(w) = m.rerandomize_interval_ms {
                    d.rerandomize_interval_ms = Some(w);
                }
            }
            let b = budget_for(&d, cfg.attack.per_attempt_ms)?;
            Some(FeasibilityRow {
                mitigation: d.id,
                entropy_bits: b.entropy_bits,
                per_attempt_ms: b.per_attempt_ms,
                window_ms: b.window_ms,
                max_attempts_in_window: b.max_attempts_in_window(),
                expected_attempts: b.expected_attempts().to_string(),
                expected_ms: b.expected_ms(),
                verdict: b.feasibility(),
            })
        })
        .collect()
}

fn sweep(cfg: &SimConfig) -> Result<SweepSummary, CliError> {
    let id = cfg.mitigation.name.unwrap_or(MitigationId::StackCanary);
    let seeds: Vec<u64> = (0..cfg.sweep.seeds)
        .map(|i| cfg.seed.wrapping_add(i))
        .collect();
    let threads = cfg.sweep.threads.min(seeds.len());
    let chunk = seeds.len().div_ceil(threads);
    let mut results: Vec<(u64, Result<AttackOutcome, CliError>)> = std::thread::scope(|s| {
        let workers: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&seed| (seed, attack(cfg, id, seed)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        workers
            .into_iter()
            .flat_map(|w| w.join().expect("sweep worker panicked"))
            .collect()
    });
    results.sort_by_key(|(seed, _)| *seed);
    let outcomes = results
        .into_iter()
        .map(|(_, r)| r)
        .collect::<Result<Vec<_>, _>>()?;
    let successes = outcomes.iter().filter(|o| succeeded(o)).count();
    let mean_attempts =
        outcomes.iter().map(|o| o.attempts as f64).sum::<f64>() / outcomes.len() as f64;
    Ok(SweepSummary {
        mitigation: id,
        runs: outcomes.len(),
        successes,
        mean_attempts,
        outcomes,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write the report (stdout when no path is set), the classification table
/// and the flow graph.
pub fn write_outputs(cfg: &SimConfig, report: &Report) -> Result<(), CliError> {
    if let Some(path) = &cfg.output.table {
        let table = classify_all(&registry(), cfg.attack.per_attempt_ms);
        let text = match path.extension().and_then(|e| e.to_str()) {
            Some("md") => table.to_markdown(),
            _ => table.to_csv(),
        };
        write(path, &text)?;
    }
    if let Some(path) = &cfg.output.dot {
        let id = cfg
            .target()
            .ok_or_else(|| CliError::Config("--dot needs a mitigation".into()))?;
        let g = build_graph_with(&id.descriptor(), GadgetShape::TwoLoad, &cfg.countermeasures)
            .map_err(|e| CliError::Config(format!("no flow graph: {e}")))?;
        write(path, &g.to_dot())?;
    }
    match &cfg.output.report {
        Some(path) => write(path, &report.to_json()),
        None => {
            print!("{}", report.to_json());
            Ok(())
        }
    }
}
