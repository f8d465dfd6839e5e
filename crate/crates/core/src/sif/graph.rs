use serde::{Deserialize, Serialize};

use crate::harness::GadgetShape;
use crate::mitigation::{CheckPlacement, Classification, MitigationDescriptor, MitigationId};
use crate::sim::Countermeasures;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Branch,
    Load,
    SecurityCheck,
    Substitute,
    Transmit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SifNode {
    pub id: usize,
    pub name: String,
    pub op_kind: OpKind,
    /// Emits a cache event in the simulator.
    pub observable: bool,
    pub secret_inputs: Vec<String>,
    pub attacker_inputs: Vec<String>,
    pub in_window: bool,
    /// Label of the trace event this node corresponds to.
    pub trace_label: Option<String>,
    /// Check nodes only: whether the check belongs to the mitigation (as
    /// opposed to the fetch check every indirect call gets).
    pub mitigation_check: bool,
    pub placement: Option<CheckPlacement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// The destination issues only inside the branch's window.
    Control,
    Data,
    /// The destination issues only after the check passes.
    Guard,
    /// The check selects between the loaded value and zero.
    Substitute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SifEdge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SifError {
    #[error("{0} has no documented check placement")]
    UnknownPlacement(MitigationId),
    #[error("{0} has tamperproof metadata and no check model")]
    NoCheckModel(MitigationId),
    #[error("edge {0} -> {1} would create a cycle")]
    Cycle(usize, usize),
}

/// Speculative information flow graph of one mitigation running one gadget.
/// An edge means the two operations are forced to happen in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SifGraph {
    pub mitigation: MitigationId,
    pub shape: GadgetShape,
    pub placement: Option<CheckPlacement>,
    /// Whether the mitigation's secret is readable in the victim's memory.
    pub resides_in_vm: bool,
    pub nodes: Vec<SifNode>,
    pub edges: Vec<SifEdge>,
}

impl SifGraph {
    pub fn node(&self, name: &str) -> Option<&SifNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn preds(&self, id: usize) -> impl Iterator<Item = &SifEdge> + '_ {
        self.edges.iter().filter(move |e| e.to == id)
    }

    pub fn succs(&self, id: usize) -> impl Iterator<Item = &SifEdge> + '_ {
        self.edges.iter().filter(move |e| e.from == id)
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.iter().any(|e| e.from == from && e.to == to)
    }

    /// Nodes reachable from `from` (excluding `from` unless on a cycle)
    /// following edges accepted by `follow`.
    pub fn reachable(&self, from: usize, follow: impl Fn(&SifEdge) -> bool) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            for e in self.succs(n) {
                if follow(e) && !seen[e.to] {
                    seen[e.to] = true;
                    stack.push(e.to);
                }
            }
        }
        seen
    }

    pub fn is_acyclic(&self) -> bool {
        (0..self.nodes.len()).all(|n| !self.reachable(n, |_| true)[n])
    }

    /// Add an edge, refusing one that closes a cycle.
    pub fn add_edge(&mut self, from: usize, to: usize, kind: EdgeKind) -> Result<(), SifError> {
        if from == to || self.reachable(to, |_| true)[from] {
            return Err(SifError::Cycle(from, to));
        }
        if !self
            .edges
            .iter()
            .any(|e| e.from == from && e.to == to && e.kind == kind)
        {
            self.edges.push(SifEdge { from, to, kind });
        }
        Ok(())
    }
}

/// Mitigations whose checks sit on the data path of every load.
fn checks_every_load(id: MitigationId) -> bool {
    use MitigationId::*;
    matches!(
        id,
        Aslr | Morpheus | Califorms | Aos | NoFatTemporal | C3 | ArmMte | SparcAdi
    )
}

struct Builder {
    nodes: Vec<SifNode>,
    edges: Vec<SifEdge>,
}

impl Builder {
    fn node(&mut self, name: &str, op_kind: OpKind, label: Option<&str>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(SifNode {
            id,
            name: name.to_string(),
            op_kind,
            observable: matches!(op_kind, OpKind::Load | OpKind::Transmit),
            secret_inputs: Vec::new(),
            attacker_inputs: Vec::new(),
            in_window: op_kind != OpKind::Branch,
            trace_label: label.map(str::to_string),
            mitigation_check: false,
            placement: None,
        });
        id
    }

    fn check(
        &mut self,
        name: &str,
        label: &str,
        placement: CheckPlacement,
        mitigation: bool,
    ) -> usize {
        let id = self.node(name, OpKind::SecurityCheck, Some(label));
        self.nodes[id].placement = Some(placement);
        self.nodes[id].mitigation_check = mitigation;
        id
    }

    fn edge(&mut self, from: usize, to: usize, kind: EdgeKind) {
        debug_assert!(from < to, "builder emits nodes in topological order");
        self.edges.push(SifEdge { from, to, kind });
    }

    /// Wire `check` to the op `op` whose result is `value`. Returns the node
    /// that carries the (possibly substituted) value onward.
    fn guard(
        &mut self,
        check: usize,
        op: usize,
        placement: CheckPlacement,
        sub_name: &str,
    ) -> usize {
        match placement {
            CheckPlacement::SequentialGuard => {
                self.edge(check, op, EdgeKind::Guard);
                op
            }
            CheckPlacement::ValueSubstitute => {
                let sub = self.node(sub_name, OpKind::Substitute, None);
                self.edge(op, sub, EdgeKind::Data);
                self.edge(check, sub, EdgeKind::Substitute);
                sub
            }
            CheckPlacement::Parallel => op,
        }
    }
}

/// Effective placement after countermeasures.
pub fn effective_placement(p: CheckPlacement, cm: &Countermeasures) -> CheckPlacement {
    if cm.parallelize_checks && p == CheckPlacement::SequentialGuard {
        CheckPlacement::Parallel
    } else {
        p
    }
}

pub fn build_graph(desc: &MitigationDescriptor, shape: GadgetShape) -> Result<SifGraph, SifError> {
    build_graph_with(desc, shape, &Countermeasures::default())
}

/// Build the graph of `desc` running the bounds-check-bypass gadget of
/// `shape`, with placements as transformed by `cm`.
pub fn build_graph_with(
    desc: &MitigationDescriptor,
    shape: GadgetShape,
    cm: &Countermeasures,
) -> Result<SifGraph, SifError> {
    let id = desc.id;
    if desc.classification == Classification::Unspoofable {
        return Err(SifError::NoCheckModel(id));
    }
    let placement = match (id, desc.placement) {
        (MitigationId::StackCanary, _) => None,
        (_, None) => return Err(SifError::UnknownPlacement(id)),
        (_, Some(p)) => Some(effective_placement(p, cm)),
    };
    let secret = desc.secret.as_ref().map(|s| s.kind.clone());
    let mut b = Builder {
        nodes: Vec::new(),
        edges: Vec::new(),
    };

    let br = b.node("branch", OpKind::Branch, Some("gadget_branch"));
    b.nodes[br].attacker_inputs = vec!["cond".into()];
    let chk_x = placement.map(|p| {
        let label = if id == MitigationId::ArmPa {
            "chk_ld_x"
        } else {
            "ld_x"
        };
        let c = b.check("chk_x", label, p, true);
        b.nodes[c].attacker_inputs = vec!["base".into(), "x".into()];
        b.nodes[c].secret_inputs = secret.iter().cloned().collect();
        b.edge(br, c, EdgeKind::Control);
        c
    });
    let ld_x = b.node("ld_x", OpKind::Load, Some("ld_x"));
    b.nodes[ld_x].attacker_inputs = vec!["base".into(), "x".into()];
    b.edge(br, ld_x, EdgeKind::Control);
    let mut y = ld_x;
    if let (Some(c), Some(p)) = (chk_x, placement) {
        y = b.guard(c, ld_x, p, "y_sub");
    }

    match shape {
        GadgetShape::TwoLoad => {
            let chk_y = match placement {
                Some(p) if checks_every_load(id) => {
                    let c = b.check("chk_y", "ld_y", p, true);
                    b.nodes[c].secret_inputs = secret.iter().cloned().collect();
                    b.edge(y, c, EdgeKind::Data);
                    Some((c, p))
                }
                _ => None,
            };
            let ld_y = b.node("ld_y", OpKind::Transmit, Some("ld_y"));
            b.edge(y, ld_y, EdgeKind::Data);
            if let Some((c, p)) = chk_y {
                b.guard(c, ld_y, p, "z_sub");
            }
        }
        GadgetShape::Jump => {
            // Instruction fetch is checked sequentially by the front end
            // unless fetches are redirected modulo the code segment.
            let fetch_placement = if cm.modulo_fetch_aslr {
                CheckPlacement::Parallel
            } else {
                CheckPlacement::SequentialGuard
            };
            let chk_f = b.check("chk_fetch", "fetch_y", fetch_placement, false);
            b.edge(y, chk_f, EdgeKind::Data);
            let fetch = b.node("fetch_y", OpKind::Transmit, Some("fetch_y"));
            b.edge(y, fetch, EdgeKind::Data);
            if fetch_placement == CheckPlacement::SequentialGuard {
                b.edge(chk_f, fetch, EdgeKind::Guard);
            }
        }
    }

    Ok(SifGraph {
        mitigation: id,
        shape,
        placement,
        resides_in_vm: desc.secret.as_ref().is_some_and(|s| s.resides_in_vm),
        nodes: b.nodes,
        edges: b.edges,
    })
}
