use serde::{Deserialize, Serialize};

use super::graph::{build_graph, SifError};
use super::verdict::{detect_leak_paths, feasibility, ssb_verdict, Verdict};
use crate::harness::{EntropyBudget, GadgetShape};
use crate::mitigation::{Classification, MitigationDescriptor, MitigationId};

/// One table cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Yes,
    No,
    Unknown,
    /// Exposed, but the metadata is not secret.
    YesButPublic,
}

impl Mark {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Mark::Yes
        } else {
            Mark::No
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Mark::Yes => "✓",
            Mark::No => "✗",
            Mark::Unknown => "?",
            Mark::YesButPublic => "Yes, but public",
        }
    }
}

impl std::fmt::Display for Mark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRow {
    pub id: MitigationId,
    pub mitigation: String,
    pub classification: String,
    pub program_data: Mark,
    pub metadata: Mark,
    pub corruptable: Mark,
    pub brute_forceable: Mark,
    pub ssb: Mark,
    /// Absent where the graph cannot be built.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationTable {
    pub rows: Vec<ClassificationRow>,
}

pub const COLUMNS: [&str; 7] = [
    "Mitigation",
    "Classification",
    "Spectre: Program Data",
    "Spectre: Metadata",
    "Corruptable",
    "Brute-forceable",
    "SSB",
];

/// Budget for brute-forcing `desc`'s secret, if it has one.
pub fn budget_for(desc: &MitigationDescriptor, per_attempt_ms: f64) -> Option<EntropyBudget> {
    desc.entropy_bits()
        .map(|n| EntropyBudget::new(n, per_attempt_ms, desc.rerandomize_interval_ms))
}

/// Full verdict for a spoofable descriptor with a known placement.
pub fn verdict_for(desc: &MitigationDescriptor, per_attempt_ms: f64) -> Result<Verdict, SifError> {
    let g = build_graph(desc, GadgetShape::TwoLoad)?;
    let mut v = detect_leak_paths(&g);
    if let Some(b) = budget_for(desc, per_attempt_ms) {
        v = feasibility(v, &b);
    }
    Ok(ssb_verdict(v, desc.classification.is_spoofable()))
}

pub fn classify(desc: &MitigationDescriptor, per_attempt_ms: f64) -> ClassificationRow {
    let row = |pd, md, c, bf, ssb, verdict| ClassificationRow {
        id: desc.id,
        mitigation: desc.name.clone(),
        classification: desc.classification.label().to_string(),
        program_data: pd,
        metadata: md,
        corruptable: c,
        brute_forceable: bf,
        ssb,
        verdict,
    };
    if desc.classification == Classification::Unspoofable {
        // Tamperproof metadata is public: leaking it gains nothing.
        let exposed = desc.program_data_exposed.unwrap_or(false);
        let md = if exposed {
            Mark::YesButPublic
        } else {
            Mark::No
        };
        return row(
            Mark::from_bool(exposed),
            md,
            Mark::No,
            Mark::No,
            Mark::No,
            None,
        );
    }
    let corruptable = Mark::Yes;
    match verdict_for(desc, per_attempt_ms) {
        Ok(v) => row(
            Mark::from_bool(v.program_data_spectre),
            Mark::from_bool(v.metadata_spectre),
            corruptable,
            Mark::from_bool(v.brute_forceable),
            Mark::from_bool(v.ssb_vulnerable),
            Some(v),
        ),
        Err(_) => {
            let u = Mark::Unknown;
            row(u, u, corruptable, u, u, None)
        }
    }
}

/// One row per registry entry, in registry order.
pub fn classify_all(registry: &[MitigationDescriptor], per_attempt_ms: f64) -> ClassificationTable {
    ClassificationTable {
        rows: registry
            .iter()
            .map(|d| classify(d, per_attempt_ms))
            .collect(),
    }
}

impl ClassificationTable {
    pub fn row(&self, id: MitigationId) -> Option<&ClassificationRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    fn cells(r: &ClassificationRow) -> [String; 7] {
        [
            r.mitigation.clone(),
            r.classification.clone(),
            r.program_data.to_string(),
            r.metadata.to_string(),
            r.corruptable.to_string(),
            r.brute_forceable.to_string(),
            r.ssb.to_string(),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS).expect("in-memory write");
        for r in &self.rows {
            w.write_record(Self::cells(r)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("| {} |\n", COLUMNS.join(" | "));
        out.push_str(&format!("|{}\n", "---|".repeat(COLUMNS.len())));
        for r in &self.rows {
            out.push_str(&format!("| {} |\n", Self::cells(r).join(" | ")));
        }
        out
    }
}
