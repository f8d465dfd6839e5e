use serde::{Deserialize, Serialize};

use super::graph::{EdgeKind, OpKind, SifGraph};
use crate::harness::EntropyBudget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Verdict {
    pub program_data_spectre: bool,
    pub metadata_spectre: bool,
    pub check_outcome_leak: bool,
    pub brute_forceable: bool,
    pub ssb_vulnerable: bool,
}

/// Whether an attacker-indexed load issues without waiting for a mitigation
/// check and its value reaches a transmitter without being substituted.
fn unguarded_load_to_transmit(g: &SifGraph) -> bool {
    let guarded = |n: usize| {
        g.preds(n)
            .any(|e| e.kind == EdgeKind::Guard && g.nodes[e.from].mitigation_check)
    };
    g.nodes
        .iter()
        .filter(|n| n.op_kind == OpKind::Load && n.attacker_inputs.iter().any(|i| i == "x"))
        .filter(|n| !guarded(n.id))
        .any(|load| {
            let reach = g.reachable(load.id, |e| {
                e.kind == EdgeKind::Data && g.nodes[e.to].op_kind != OpKind::Substitute
            });
            g.nodes
                .iter()
                .any(|n| n.op_kind == OpKind::Transmit && reach[n.id])
        })
}

/// Whether some mitigation check inside the window reaches an observable
/// node.
fn check_reaches_observable(g: &SifGraph) -> bool {
    g.nodes
        .iter()
        .filter(|n| n.op_kind == OpKind::SecurityCheck && n.mitigation_check && n.in_window)
        .any(|c| {
            let reach = g.reachable(c.id, |_| true);
            g.nodes.iter().any(|n| n.observable && reach[n.id])
        })
}

/// The three leak booleans. `brute_forceable` and `ssb_vulnerable` are
/// left false.
pub fn detect_leak_paths(g: &SifGraph) -> Verdict {
    let program_data_spectre = unguarded_load_to_transmit(g);
    Verdict {
        program_data_spectre,
        metadata_spectre: g.resides_in_vm && program_data_spectre,
        check_outcome_leak: check_reaches_observable(g),
        ..Verdict::default()
    }
}

/// Fill `brute_forceable`: the check outcome leaks and the expected number
/// of attempts fits in one re-randomization window.
pub fn feasibility(v: Verdict, budget: &EntropyBudget) -> Verdict {
    Verdict {
        brute_forceable: v.check_outcome_leak && budget.feasible(),
        ..v
    }
}

/// Fill `ssb_vulnerable`: corruptable metadata that either leaks through
/// Spectre or can be brute-forced.
pub fn ssb_verdict(v: Verdict, corruptable: bool) -> Verdict {
    Verdict {
        ssb_vulnerable: corruptable && (v.metadata_spectre || v.brute_forceable),
        ..v
    }
}
