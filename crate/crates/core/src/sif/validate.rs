use serde::{Deserialize, Serialize};

use super::graph::{build_graph_with, EdgeKind, OpKind, SifGraph};
use crate::harness::{run_gadget, AttackConfig, GadgetShape, HarnessError, VictimProcess};
use crate::mitigation::{MitigationDescriptor, MitigationId};
use crate::sim::{CheckRecord, ExecutionTrace, TraceEvent};

/// Which nodes of a graph fire for given check outcomes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fired: Vec<bool>,
    /// Substitute nodes that replaced the value with zero.
    pub substituted: Vec<bool>,
}

/// Propagate firing through the graph. A node fires when every predecessor
/// fired and every guarding check passed; `outcome` supplies each fired
/// check's result (missing means pass).
pub fn evaluate(g: &SifGraph, outcome: impl Fn(&super::SifNode) -> Option<bool>) -> Evaluation {
    let n = g.nodes.len();
    let mut fired = vec![false; n];
    let mut passed = vec![true; n];
    let mut substituted = vec![false; n];
    // Nodes are stored in topological order.
    for node in &g.nodes {
        let id = node.id;
        fired[id] = g.preds(id).all(|e| match e.kind {
            EdgeKind::Guard => fired[e.from] && passed[e.from],
            EdgeKind::Substitute => fired[e.from],
            EdgeKind::Control | EdgeKind::Data => fired[e.from],
        });
        if !fired[id] {
            continue;
        }
        match node.op_kind {
            OpKind::SecurityCheck => passed[id] = outcome(node).unwrap_or(true),
            OpKind::Substitute => {
                substituted[id] = g
                    .preds(id)
                    .any(|e| e.kind == EdgeKind::Substitute && !passed[e.from]);
            }
            _ => {}
        }
    }
    Evaluation { fired, substituted }
}

fn event<'a>(trace: &'a ExecutionTrace, label: &'a str) -> Option<&'a TraceEvent> {
    trace.labelled(label).next()
}

fn check_record(trace: &ExecutionTrace, label: &str) -> Option<CheckRecord> {
    event(trace, label).and_then(|e| e.check)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub mitigation: MitigationId,
    pub shape: GadgetShape,
    pub runs: usize,
    pub mismatches: Vec<String>,
}

impl ConsistencyReport {
    pub fn consistent(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compare what the graph predicts for `trace` with what the trace shows:
/// observable nodes against cache events, substitution nodes against
/// zeroed loads, and check placements against the recorded checks.
pub fn cross_validate(g: &SifGraph, trace: &ExecutionTrace) -> Vec<String> {
    let eval = evaluate(g, |n| {
        n.trace_label
            .as_deref()
            .and_then(|l| check_record(trace, l))
            .map(|c| c.pass)
    });
    let mut mismatches = Vec::new();
    for node in &g.nodes {
        let Some(label) = node.trace_label.as_deref() else {
            if node.op_kind == OpKind::Substitute {
                let load = g
                    .preds(node.id)
                    .find(|e| e.kind == EdgeKind::Data)
                    .and_then(|e| g.nodes[e.from].trace_label.as_deref());
                let seen = load
                    .and_then(|l| event(trace, l))
                    .is_some_and(|e| e.substituted);
                if seen != eval.substituted[node.id] {
                    mismatches.push(format!(
                        "{}: graph predicts substituted={}, trace has {}",
                        node.name, eval.substituted[node.id], seen
                    ));
                }
            }
            continue;
        };
        if node.observable {
            let seen = event(trace, label).is_some_and(|e| e.cache_event.is_some());
            if seen != eval.fired[node.id] {
                mismatches.push(format!(
                    "{}: graph predicts cache event={}, trace has {}",
                    node.name, eval.fired[node.id], seen
                ));
            }
        }
        if node.op_kind == OpKind::SecurityCheck && eval.fired[node.id] {
            if let (Some(declared), Some(rec)) = (node.placement, check_record(trace, label)) {
                if declared != rec.placement {
                    mismatches.push(format!(
                        "{}: graph declares {}, trace checked {}",
                        node.name,
                        declared.as_str(),
                        rec.placement.as_str()
                    ));
                }
            }
        }
    }
    mismatches
}

/// Run the gadget twice on fresh processes, once with a passing and once
/// with a failing check, and cross-validate both traces against the graph
/// built from `declared`.
pub fn cross_validate_case(
    declared: &MitigationDescriptor,
    shape: GadgetShape,
    config: &AttackConfig,
) -> Result<ConsistencyReport, HarnessError> {
    let cm = config.machine.countermeasures;
    let g = build_graph_with(declared, shape, &cm)
        .map_err(|_| HarnessError::UnknownPlacement(declared.id))?;
    let mut mismatches = Vec::new();
    let mut runs = 0;
    for pass in [true, false] {
        let mut p = VictimProcess::new(declared.id, config)?;
        let inputs = p.fixture_inputs(pass);
        let trace = run_gadget(&mut p, shape, inputs)?;
        runs += 1;
        let tag = if pass { "pass" } else { "fail" };
        mismatches.extend(
            cross_validate(&g, &trace)
                .into_iter()
                .map(|m| format!("{tag}: {m}")),
        );
    }
    Ok(ConsistencyReport {
        mitigation: declared.id,
        shape,
        runs,
        mismatches,
    })
}

/// Every executable mitigation under both gadget shapes.
pub fn cross_validate_all(config: &AttackConfig) -> Result<Vec<ConsistencyReport>, HarnessError> {
    let mut out = Vec::new();
    for id in MitigationId::EXECUTABLE {
        for shape in GadgetShape::ALL {
            out.push(cross_validate_case(&id.descriptor(), shape, config)?);
        }
    }
    Ok(out)
}
