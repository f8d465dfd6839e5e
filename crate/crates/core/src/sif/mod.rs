//! Speculative information flow graphs: which operations of a Spectre
//! gadget are forced to happen in order under each mitigation, what leaks
//! as a result, and whether the mitigation falls to a speculative shield
//! bypass.

mod classify;
mod graph;
mod validate;
mod verdict;

pub use classify::{
    budget_for, classify, classify_all, verdict_for, ClassificationRow, ClassificationTable, Mark,
    COLUMNS,
};
pub use graph::{
    build_graph, build_graph_with, effective_placement, EdgeKind, OpKind, SifEdge, SifError,
    SifGraph, SifNode,
};
pub use validate::{
    cross_validate, cross_validate_all, cross_validate_case, evaluate, ConsistencyReport,
    Evaluation,
};
pub use verdict::{detect_leak_paths, feasibility, ssb_verdict, Verdict};

impl SifGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn to_dot(&self) -> String {
        let mut out = format!(
            "digraph \"{}_{}\" {{\n  rankdir=LR;\n",
            self.mitigation.key(),
            self.shape.as_str()
        );
        for n in &self.nodes {
            let shape = match n.op_kind {
                OpKind::Branch => "diamond",
                OpKind::SecurityCheck => "octagon",
                OpKind::Substitute => "trapezium",
                OpKind::Load | OpKind::Transmit => "box",
            };
            let mut label = n.name.clone();
            if let Some(p) = n.placement {
                label.push_str(&format!("\\n{}", p.as_str()));
            }
            let style = if n.observable {
                ", style=filled, fillcolor=lightgrey"
            } else {
                ""
            };
            out.push_str(&format!(
                "  n{} [label=\"{label}\", shape={shape}{style}];\n",
                n.id
            ));
        }
        for e in &self.edges {
            let style = match e.kind {
                EdgeKind::Control => "dashed",
                EdgeKind::Data => "solid",
                EdgeKind::Guard => "bold",
                EdgeKind::Substitute => "dotted",
            };
            out.push_str(&format!("  n{} -> n{} [style={style}];\n", e.from, e.to));
        }
        out.push_str("}\n");
        out
    }
}
