use ssb_core::harness::victim::CALIFORMS_OBJECT;
use ssb_core::harness::*;
use ssb_core::mitigation::{CheckOutcome, MitigationId};
use ssb_core::sim::layout::{LAYOUT_META_BASE, MMAP_BASE};

fn process(m: MitigationId, cfg: &AttackConfig) -> VictimProcess {
    VictimProcess::new(m, cfg).unwrap()
}

fn parallel(seed: u64) -> AttackConfig {
    let mut cfg = AttackConfig::with_seed(seed);
    cfg.machine.countermeasures.parallelize_checks = true;
    cfg
}

/// Probe every ASLR offset of the test-scale space.
fn aslr_sweep(p: &mut VictimProcess) -> Vec<CheckOutcome> {
    let align = p.aslr.as_ref().unwrap().align;
    (0..1u64 << AttackConfig::TEST_ENTROPY_BITS)
        .map(|k| transient_crash_probe(p, MMAP_BASE + k * align, Inference::AnyHit).unwrap())
        .collect()
}

#[test]
fn aslr_sweep_has_exactly_one_passing_offset() {
    let mut p = process(MitigationId::Aslr, &AttackConfig::with_seed(11));
    let outcomes = aslr_sweep(&mut p);
    let align = p.aslr.as_ref().unwrap().align;
    let passes: Vec<usize> = (0..outcomes.len())
        .filter(|&k| outcomes[k].passed())
        .collect();
    assert_eq!(passes.len(), 1);
    assert_eq!(passes[0] as u64 * align, p.aslr_offset().unwrap());
    assert_eq!(p.crashes_observed, 0);
}

#[test]
fn aslr_probe_attack_recovers_the_offset() {
    let mut p = process(MitigationId::Aslr, &AttackConfig::with_seed(3));
    let out = probe_attack(&mut p).unwrap();
    assert_eq!(out.leaked_u64(), p.aslr_offset().unwrap(), "{out:?}");
    assert_eq!(out.crashes_observed, 0);
    assert_eq!(out.feasibility, Feasibility::Feasible);
}

#[test]
fn parallel_checks_hide_the_aslr_outcome() {
    let mut p = process(MitigationId::Aslr, &parallel(11));
    let outcomes = aslr_sweep(&mut p);
    assert!(outcomes.iter().all(|&o| o == outcomes[0]));
}

#[test]
fn parallel_checks_expose_the_offset_to_spectre() {
    let mut p = process(MitigationId::Aslr, &AttackConfig::with_seed(11));
    assert_eq!(
        transient_dereference_leak(&mut p, LAYOUT_META_BASE, 0, 8),
        Err(HarnessError::GuardBlocked)
    );
    let mut p = process(MitigationId::Aslr, &parallel(11));
    let leaked = transient_dereference_leak(&mut p, LAYOUT_META_BASE, 0, 8).unwrap();
    assert_eq!(
        u64::from_le_bytes(leaked.try_into().unwrap()),
        p.aslr_offset().unwrap()
    );
}

#[test]
fn morpheus_is_infeasible() {
    let mut p = process(MitigationId::Morpheus, &AttackConfig::with_seed(1));
    let budget = p.budget();
    assert_eq!(budget.max_attempts_in_window(), Some(18));
    let out = probe_attack(&mut p).unwrap();
    assert_eq!(out.feasibility, Feasibility::Infeasible);
    assert!(out.reason.unwrap().starts_with("infeasible"));
    assert_eq!(out.attempts, 0);
}

#[test]
fn morpheus_brute_force_loses_its_progress() {
    // Ignore the budget and sweep anyway: every re-randomization throws the
    // sweep back to the start.
    let mut p = process(MitigationId::Morpheus, &AttackConfig::with_seed(1));
    let budget = EntropyBudget::new(p.entropy_bits, p.config.per_attempt_ms, None);
    let align = p.aslr.as_ref().unwrap().align;
    let truth = p.aslr_offset().unwrap();
    let mut rerolled = false;
    let res = brute_force_secret(&mut p, budget, GuessOrder::Ascending, |p, k| {
        rerolled |= p.aslr_offset().unwrap() != truth;
        Ok(transient_crash_probe(p, MMAP_BASE + k * align, Inference::AnyHit)?.passed())
    })
    .unwrap();
    assert!(rerolled);
    if let BruteForce::Found { guess, attempts } = res {
        // A hit is only possible on the offset current at that moment.
        assert!(attempts <= 18 * 4096);
        assert_eq!(guess * align, p.aslr_offset().unwrap());
    }
}

#[test]
fn stale_secret_fails_after_rerandomization() {
    let mut p = process(MitigationId::Morpheus, &AttackConfig::with_seed(2));
    let old = p.mmap_start().unwrap();
    assert!(transient_crash_probe(&mut p, old, Inference::AnyHit)
        .unwrap()
        .passed());
    while p.mmap_start().unwrap() == old {
        p.rerandomize();
    }
    assert!(!transient_crash_probe(&mut p, old, Inference::AnyHit)
        .unwrap()
        .passed());
    let new = p.mmap_start().unwrap();
    assert!(transient_crash_probe(&mut p, new, Inference::AnyHit)
        .unwrap()
        .passed());
}

#[test]
fn califorms_redzone_found_within_eight_attempts() {
    for seed in 0..8 {
        let mut p = process(MitigationId::Califorms, &AttackConfig::with_seed(seed));
        let out = probe_attack(&mut p).unwrap();
        let layout = p.secrets.califorms.clone().unwrap();
        assert!(out.attempts <= 8, "{out:?}");
        assert_eq!(CALIFORMS_OBJECT + out.leaked_u64(), layout.fields[0].0);
    }
}

#[test]
fn tag_and_pac_probes_recover_the_secret() {
    let mut p = process(MitigationId::NoFatTemporal, &AttackConfig::with_seed(4));
    let tagged = p.secrets.tagged_ptr.unwrap();
    let out = probe_attack(&mut p).unwrap();
    assert_eq!(out.leaked_u64(), tagged >> 48, "{out:?}");

    let cfg = AttackConfig {
        pac_bits: 10,
        ..AttackConfig::with_seed(4)
    };
    let mut p = process(MitigationId::ArmPa, &cfg);
    let signed = p.secrets.pa_signed.unwrap();
    let out = probe_attack(&mut p).unwrap();
    assert_eq!(out.leaked_u64(), signed >> 48, "{out:?}");
    assert_eq!(out.crashes_observed, 0);
}

#[test]
fn brute_force_over_sixteen_bits_averages_half_the_space() {
    let mut p = process(MitigationId::Aslr, &AttackConfig::with_seed(0));
    let budget = EntropyBudget::new(16, PER_ATTEMPT_MS, None);
    assert_eq!(budget.expected_attempts(), 1 << 15);
    let mut total = 0u64;
    let trials = 64;
    for t in 0..trials {
        let secret = (t * 0x9e37) % (1 << 16);
        let res = brute_force_secret(&mut p, budget, GuessOrder::Permuted(t), |_, g| {
            Ok(g == secret)
        })
        .unwrap();
        let BruteForce::Found { guess, attempts } = res else {
            panic!("{res:?}")
        };
        assert_eq!(guess, secret);
        total += attempts;
    }
    let mean = total as f64 / trials as f64;
    assert!((mean - 32768.0).abs() < 8000.0, "mean {mean}");
}

#[test]
fn noisy_channel_still_leaks_the_canary() {
    let cfg = AttackConfig {
        noise: Some(0.002),
        ..AttackConfig::with_seed(9)
    };
    let mut p = process(MitigationId::StackCanary, &cfg);
    let out = poc_canary(&mut p, Variant::Attack).unwrap();
    assert_eq!(out.leaked_u64(), p.secrets.canary);
    assert!(out.hijacked);
}

#[test]
fn noisy_probe_majority_keeps_aslr_outcomes() {
    let cfg = AttackConfig {
        noise: Some(0.1),
        ..AttackConfig::with_seed(6)
    };
    let mut p = process(MitigationId::Aslr, &cfg);
    let start = p.mmap_start().unwrap();
    assert!(transient_crash_probe(&mut p, start, Inference::AnyHit)
        .unwrap()
        .passed());
    assert!(
        !transient_crash_probe(&mut p, start + 0x1000, Inference::AnyHit)
            .unwrap()
            .passed()
    );
}
