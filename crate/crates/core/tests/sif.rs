use proptest::prelude::*;
use ssb_core::harness::{AttackConfig, GadgetShape, PER_ATTEMPT_MS};
use ssb_core::mitigation::{registry, CheckPlacement, Classification, MitigationId};
use ssb_core::sif::*;
use ssb_core::sim::Countermeasures;

fn graph(id: MitigationId, shape: GadgetShape) -> SifGraph {
    build_graph(&id.descriptor(), shape).unwrap()
}

fn buildable() -> Vec<(MitigationId, GadgetShape)> {
    registry()
        .iter()
        .filter(|d| build_graph(d, GadgetShape::TwoLoad).is_ok())
        .flat_map(|d| GadgetShape::ALL.map(|s| (d.id, s)))
        .collect()
}

#[test]
fn every_graph_is_acyclic() {
    for (id, shape) in buildable() {
        assert!(graph(id, shape).is_acyclic(), "{id:?} {shape:?}");
    }
}

#[test]
fn add_edge_rejects_cycles() {
    let mut g = graph(MitigationId::Aslr, GadgetShape::TwoLoad);
    let br = g.node("branch").unwrap().id;
    let ld_y = g.node("ld_y").unwrap().id;
    assert_eq!(
        g.add_edge(ld_y, br, EdgeKind::Data),
        Err(SifError::Cycle(ld_y, br))
    );
    assert!(g.is_acyclic());
}

#[test]
fn tamperproof_and_unknown_entries_have_no_graph() {
    for d in registry() {
        let r = build_graph(&d, GadgetShape::TwoLoad);
        match (d.classification, d.id) {
            (Classification::Unspoofable, _) => assert_eq!(r, Err(SifError::NoCheckModel(d.id))),
            (_, MitigationId::ArmMte | MitigationId::SparcAdi) => {
                assert_eq!(r, Err(SifError::UnknownPlacement(d.id)))
            }
            _ => assert!(r.is_ok(), "{:?}", d.id),
        }
    }
}

#[test]
fn placement_shapes_the_leak_paths() {
    let canary = detect_leak_paths(&graph(MitigationId::StackCanary, GadgetShape::TwoLoad));
    assert!(canary.program_data_spectre && canary.metadata_spectre);
    assert!(!canary.check_outcome_leak);

    let aslr = detect_leak_paths(&graph(MitigationId::Aslr, GadgetShape::TwoLoad));
    assert!(!aslr.program_data_spectre && aslr.check_outcome_leak);

    let aos = detect_leak_paths(&graph(MitigationId::Aos, GadgetShape::TwoLoad));
    assert!(aos.program_data_spectre && aos.metadata_spectre);
    // Nothing waits on a parallel check, so its outcome has no observable.
    assert!(!aos.check_outcome_leak);

    let cal = graph(MitigationId::Califorms, GadgetShape::TwoLoad);
    assert!(cal.node("y_sub").is_some());
    let v = detect_leak_paths(&cal);
    assert!(!v.program_data_spectre && v.check_outcome_leak);
}

#[test]
fn parallelizing_exposes_program_data() {
    let cm = Countermeasures {
        parallelize_checks: true,
        ..Countermeasures::default()
    };
    let g = build_graph_with(&MitigationId::Aslr.descriptor(), GadgetShape::TwoLoad, &cm).unwrap();
    assert_eq!(g.placement, Some(CheckPlacement::Parallel));
    let v = detect_leak_paths(&g);
    assert!(v.program_data_spectre && v.metadata_spectre);
}

#[test]
fn classification_ssb_column() {
    let t = classify_all(&registry(), PER_ATTEMPT_MS);
    use MitigationId::*;
    for id in [StackCanary, Aslr, Califorms, Aos, NoFatTemporal, C3, ArmPa] {
        assert_eq!(t.row(id).unwrap().ssb, Mark::Yes, "{id:?}");
    }
    assert_eq!(t.row(Morpheus).unwrap().ssb, Mark::No);
    for id in [ArmMte, SparcAdi] {
        let r = t.row(id).unwrap();
        assert_eq!(
            (
                r.program_data,
                r.metadata,
                r.corruptable,
                r.brute_forceable,
                r.ssb
            ),
            (
                Mark::Unknown,
                Mark::Unknown,
                Mark::Yes,
                Mark::Unknown,
                Mark::Unknown
            )
        );
    }
    for d in registry()
        .iter()
        .filter(|d| d.classification == Classification::Unspoofable)
    {
        let r = t.row(d.id).unwrap();
        assert_eq!(r.ssb, Mark::No);
        assert_eq!(r.corruptable, Mark::No);
    }
    assert_eq!(t.rows.len(), registry().len());
}

#[test]
fn morpheus_is_not_brute_forceable_but_aslr_is() {
    let t = classify_all(&registry(), PER_ATTEMPT_MS);
    assert_eq!(
        t.row(MitigationId::Morpheus).unwrap().brute_forceable,
        Mark::No
    );
    assert_eq!(
        t.row(MitigationId::Aslr).unwrap().brute_forceable,
        Mark::Yes
    );
}

#[test]
fn csv_and_markdown_have_a_row_per_entry() {
    let t = classify_all(&registry(), PER_ATTEMPT_MS);
    let csv = t.to_csv();
    assert_eq!(csv.lines().count(), t.rows.len() + 1);
    assert!(csv.starts_with("Mitigation,Classification,"));
    assert!(csv.contains("\"Yes, but public\""));
    assert_eq!(t.to_markdown().lines().count(), t.rows.len() + 2);
}

#[test]
fn graphs_are_consistent_with_the_simulator() {
    let reports = cross_validate_all(&AttackConfig::default()).unwrap();
    assert_eq!(reports.len(), 14);
    for r in reports {
        assert!(
            r.consistent(),
            "{:?} {:?}: {:?}",
            r.mitigation,
            r.shape,
            r.mismatches
        );
        assert_eq!(r.runs, 2);
    }
}

#[test]
fn graphs_stay_consistent_under_countermeasures() {
    for cm in [
        Countermeasures {
            parallelize_checks: true,
            ..Countermeasures::default()
        },
        Countermeasures {
            modulo_fetch_aslr: true,
            ..Countermeasures::default()
        },
    ] {
        let mut cfg = AttackConfig::default();
        cfg.machine.countermeasures = cm;
        for r in cross_validate_all(&cfg).unwrap() {
            assert!(
                r.consistent(),
                "{cm:?} {:?} {:?}: {:?}",
                r.mitigation,
                r.shape,
                r.mismatches
            );
        }
    }
}

#[test]
fn misdeclared_placement_is_caught() {
    let mut declared = MitigationId::Aos.descriptor();
    declared.placement = Some(CheckPlacement::SequentialGuard);
    let r = cross_validate_case(&declared, GadgetShape::TwoLoad, &AttackConfig::default()).unwrap();
    assert!(!r.consistent());

    let mut declared = MitigationId::Aslr.descriptor();
    declared.placement = Some(CheckPlacement::Parallel);
    let r = cross_validate_case(&declared, GadgetShape::TwoLoad, &AttackConfig::default()).unwrap();
    assert!(!r.consistent());
}

#[test]
fn dot_and_json_exports() {
    let g = graph(MitigationId::Califorms, GadgetShape::TwoLoad);
    let dot = g.to_dot();
    assert!(dot.starts_with("digraph \"califorms_two_load\""));
    assert_eq!(dot.matches(" -> ").count(), g.edges.len());
    let back: SifGraph = serde_json::from_str(&g.to_json()).unwrap();
    assert_eq!(back, g);
}

proptest! {
    /// Extra ordering constraints from a check to an observable node never
    /// remove a check-outcome leak.
    #[test]
    fn adding_check_edges_keeps_the_outcome_leak(idx in 0usize..64, picks in prop::collection::vec((0usize..16, 0usize..16), 0..6)) {
        let cases = buildable();
        let (id, shape) = cases[idx % cases.len()];
        let mut g = graph(id, shape);
        let before = detect_leak_paths(&g);
        let checks: Vec<usize> = g.nodes.iter().filter(|n| n.op_kind == OpKind::SecurityCheck).map(|n| n.id).collect();
        let observables: Vec<usize> = g.nodes.iter().filter(|n| n.observable).map(|n| n.id).collect();
        prop_assume!(!checks.is_empty());
        for (c, o) in picks {
            let (c, o) = (checks[c % checks.len()], observables[o % observables.len()]);
            let _ = g.add_edge(c, o, EdgeKind::Data);
        }
        prop_assert!(g.is_acyclic());
        let after = detect_leak_paths(&g);
        prop_assert!(!before.check_outcome_leak || after.check_outcome_leak);
    }
}
