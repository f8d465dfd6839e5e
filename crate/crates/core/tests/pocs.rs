use ssb_core::harness::*;
use ssb_core::mitigation::MitigationId;
use ssb_core::sim::ExceptionKind;

fn process(m: MitigationId, seed: u64) -> VictimProcess {
    VictimProcess::new(m, &AttackConfig::with_seed(seed)).unwrap()
}

fn invisible(seed: u64) -> AttackConfig {
    let mut cfg = AttackConfig::with_seed(seed);
    cfg.machine.countermeasures.invisible_spec = true;
    cfg
}

#[test]
fn canary_poc_hijacks_and_leaks_the_canary() {
    for seed in [0, 1, 7] {
        let mut p = process(MitigationId::StackCanary, seed);
        let out = poc_canary(&mut p, Variant::Attack).unwrap();
        assert_eq!(out.leaked_u64(), p.secrets.canary);
        assert_eq!(out.leaked_u64(), p.read(victim::CANARY_GLOBAL));
        assert!(out.hijacked, "{out:?}");
        assert_eq!(out.crashes_observed, 0);
        assert!(out.probe_iterations <= 8 * 256);
    }
}

#[test]
fn canary_negative_control_crashes() {
    let mut p = process(MitigationId::StackCanary, 1);
    let out = poc_canary(&mut p, Variant::NegativeControl).unwrap();
    assert!(!out.hijacked);
    assert_eq!(out.crashes_observed, 1);
}

#[test]
fn c3_poc_hijacks() {
    for seed in [0, 2] {
        let mut p = process(MitigationId::C3, seed);
        let out = poc_c3(&mut p, Variant::Attack).unwrap();
        assert!(out.hijacked, "{out:?}");
        assert_eq!(out.crashes_observed, 0);
    }
}

#[test]
fn c3_negative_control_fails() {
    let mut p = process(MitigationId::C3, 2);
    let out = poc_c3(&mut p, Variant::NegativeControl).unwrap();
    assert!(!out.hijacked);
    assert_eq!(out.crashes_observed, 1);
}

#[test]
fn c3_synonym_discrimination_counts() {
    let mut p = process(MitigationId::C3, 4);
    let victim_ca = p.secrets.c3_victim_ca.unwrap();
    assert_eq!(
        c3_probe_misses(&mut p, victim_ca).unwrap(),
        C3_SYNONYM_MISSES
    );
    let found = c3_find_synonym(&mut p).unwrap().expect("synonym in space");
    assert_eq!(c3_probe_misses(&mut p, found).unwrap(), C3_SYNONYM_MISSES);
    assert_eq!(
        c3_probe_misses(&mut p, found ^ 1 << 21).unwrap(),
        C3_BASELINE_MISSES
    );
}

#[test]
fn aos_poc_hijacks() {
    let mut p = process(MitigationId::Aos, 3);
    let (a, b) = p.secrets.aos.unwrap();
    let out = poc_aos(&mut p, Variant::Attack).unwrap();
    assert_eq!(
        out.leaked_secret,
        [a.meta().to_le_bytes(), b.meta().to_le_bytes()].concat()
    );
    assert!(out.hijacked, "{out:?}");
    assert_eq!(out.crashes_observed, 0);
}

#[test]
fn aos_negative_control_crashes_at_commit() {
    let mut p = process(MitigationId::Aos, 3);
    let out = poc_aos(&mut p, Variant::NegativeControl).unwrap();
    assert!(!out.hijacked);
    assert_eq!(out.crashes_observed, 1, "{out:?}");
}

#[test]
fn aos_with_narrow_pacs_still_hijacks() {
    let cfg = AttackConfig {
        pac_bits: 11,
        ..AttackConfig::with_seed(5)
    };
    let mut p = VictimProcess::new(MitigationId::Aos, &cfg).unwrap();
    let out = poc_aos(&mut p, Variant::Attack).unwrap();
    assert!(out.hijacked, "{out:?}");
}

#[test]
fn invisible_speculation_defeats_every_poc() {
    let mut p = VictimProcess::new(MitigationId::StackCanary, &invisible(1)).unwrap();
    let out = poc_canary(&mut p, Variant::Attack).unwrap();
    assert!(!out.hijacked);
    assert!(
        out.reason.as_deref().unwrap().starts_with("leak blocked"),
        "{out:?}"
    );

    let mut p = VictimProcess::new(MitigationId::C3, &invisible(2)).unwrap();
    let out = poc_c3(&mut p, Variant::Attack).unwrap();
    assert!(!out.hijacked, "{out:?}");

    let mut p = VictimProcess::new(MitigationId::Aos, &invisible(3)).unwrap();
    let out = poc_aos(&mut p, Variant::Attack).unwrap();
    assert!(!out.hijacked);
    assert!(
        out.reason.as_deref().unwrap().starts_with("leak blocked"),
        "{out:?}"
    );
}

#[test]
fn outcome_serializes_with_the_report_keys() {
    let mut p = process(MitigationId::StackCanary, 1);
    let out = poc_canary(&mut p, Variant::Attack).unwrap();
    let v = serde_json::to_value(&out).unwrap();
    for key in [
        "scenario",
        "mitigation",
        "seed",
        "leaked",
        "attempts",
        "crashes",
        "hijacked",
        "feasibility",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(
        v["leaked"],
        format!("{:016x}", p.secrets.canary.swap_bytes())
    );
}

#[test]
fn aos_control_crash_is_a_deferred_check_failure() {
    let mut p = process(MitigationId::Aos, 3);
    let out = poc_aos(&mut p, Variant::NegativeControl).unwrap();
    let crash = out.crash.expect("architectural crash");
    assert_eq!(crash.kind, ExceptionKind::CheckFailure);
    assert!(crash.deferred);
}
