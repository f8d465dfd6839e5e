use serde::{Deserialize, Serialize};

use super::victim::*;
use super::{EntropyBudget, HarnessError, VictimProcess};
use crate::crypto::Permutation;
use crate::mitigation::{CheckOutcome, CheckPlacement};
use crate::side_channel::{flush_reload, ProbeReport};
use crate::sim::layout::{probe_line, PROBE_LINES};
use crate::sim::{ExecutionTrace, Machine};
use crate::Va;

/// Tries per byte before the receiver gives up under noise.
const MAX_RETRIES: usize = 16;

/// Mistrain the gadget's bounds branch, write the attacker inputs and run
/// the gadget once.
pub fn run_gadget(
    p: &mut VictimProcess,
    shape: GadgetShape,
    inputs: GadgetInputs,
) -> Result<ExecutionTrace, HarnessError> {
    let VictimProcess {
        machine, victim, ..
    } = p;
    let trace = gadget_on(machine, victim, shape, inputs)?;
    if trace.crash.is_some() {
        p.crashes_observed += 1;
    }
    Ok(trace)
}

pub(super) fn gadget_on(
    m: &mut Machine,
    victim: &VictimTemplate,
    shape: GadgetShape,
    inputs: GadgetInputs,
) -> Result<ExecutionTrace, HarnessError> {
    let mem = &mut m.state.memory;
    mem.write(X_SLOT, 8, inputs.x);
    mem.write(MASK_SLOT, 8, inputs.mask);
    mem.write(BASE_SLOT, 8, inputs.base);
    mem.write(COND_SLOT, 8, inputs.cond);
    m.train_branch(victim.branch_pc(shape), false);
    // An uncached condition keeps the branch unresolved long enough.
    m.cache.flush(COND_SLOT);
    Ok(m.run(&victim.program, victim.symbol(shape.entry()))?)
}

fn probe_lines(n: u64) -> Vec<Va> {
    (0..n).map(probe_line).collect()
}

/// One Flush+Reload round over `lines` around a two-load gadget run.
fn receive(
    p: &mut VictimProcess,
    lines: &[Va],
    inputs: GadgetInputs,
) -> Result<(ProbeReport, ExecutionTrace), HarnessError> {
    let VictimProcess {
        machine,
        victim,
        noise,
        ..
    } = p;
    let (report, trace) = flush_reload(machine, lines, noise.as_mut(), |m| {
        gadget_on(m, victim, GadgetShape::TwoLoad, inputs)
    });
    let trace = trace?;
    p.probe_iterations += lines.len() as u64;
    p.attempts += 1;
    if trace.crash.is_some() {
        p.crashes_observed += 1;
    }
    Ok((report, trace))
}

/// Whether the trace shows the first gadget load stopped by a sequential
/// guard.
fn guard_blocked(trace: &ExecutionTrace) -> bool {
    ["chk_ld_x", "ld_x"].iter().any(|l| {
        trace.labelled(l).any(|e| {
            e.cache_event.is_none()
                && e.check
                    .is_some_and(|c| !c.pass && c.placement == CheckPlacement::SequentialGuard)
        })
    })
}

/// Leak `n` bytes starting at `base + offset` through the two-load gadget,
/// one byte per transient run, decoded from which probe line was cached.
pub fn transient_dereference_leak(
    p: &mut VictimProcess,
    base: u64,
    offset: u64,
    n: usize,
) -> Result<Vec<u8>, HarnessError> {
    let lines = probe_lines(PROBE_LINES);
    let mut out = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let inputs = GadgetInputs {
            cond: 0,
            base,
            x: offset.wrapping_add(i),
            mask: 0xff,
        };
        let mut last = HarnessError::NoSignal;
        let mut byte = None;
        for _ in 0..MAX_RETRIES {
            let (report, trace) = receive(p, &lines, inputs)?;
            let hits = report.hit_indices();
            match hits.len() {
                1 => {
                    byte = Some(hits[0] as u8);
                    break;
                }
                0 if guard_blocked(&trace) => return Err(HarnessError::GuardBlocked),
                // Nothing reached the cache. Without noise a retry cannot help.
                0 if p.noise.is_none() => return Err(HarnessError::NoSignal),
                0 => last = HarnessError::NoSignal,
                k => last = HarnessError::Ambiguous(k),
            }
        }
        out.push(byte.ok_or(last)?);
    }
    Ok(out)
}

/// How a probe run's cache footprint is read as a check outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inference {
    /// Pass iff the dependent load fired at all. The gadget masks the
    /// loaded value to 0, so only probe line 0 is timed.
    AnyHit,
    /// Pass iff the dependent load indexed a non-zero line, i.e. the first
    /// load returned real data rather than a substituted zero.
    NonZeroLine,
}

/// Run the gadget speculatively on `guess` and infer whether the
/// mitigation's check passed. A failing check never crashes: the window is
/// squashed before its exception commits.
pub fn transient_crash_probe(
    p: &mut VictimProcess,
    guess: u64,
    inference: Inference,
) -> Result<CheckOutcome, HarnessError> {
    let (lines, mask) = match inference {
        Inference::AnyHit => (probe_lines(1), 0),
        Inference::NonZeroLine => (probe_lines(PROBE_LINES), 0xff),
    };
    let inputs = GadgetInputs {
        cond: 0,
        base: guess,
        x: 0,
        mask,
    };
    let mut vote = 0i32;
    // Majority over repeated runs when the receiver is noisy.
    let rounds = if p.noise.is_some() { 5 } else { 1 };
    for _ in 0..rounds {
        let (report, _) = receive(p, &lines, inputs)?;
        let pass = match inference {
            Inference::AnyHit => report.hits[0],
            Inference::NonZeroLine => report.hit_indices().iter().any(|&i| i != 0),
        };
        vote += if pass { 1 } else { -1 };
    }
    Ok(CheckOutcome::from_bool(vote > 0))
}

/// Order in which brute-force guesses are tried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessOrder {
    /// Seeded pseudo-random permutation of the space.
    Permuted(u64),
    Ascending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BruteForce {
    Found {
        guess: u64,
        attempts: u64,
    },
    /// Every guess was tried (restarting after each re-randomization) with
    /// no pass.
    Exhausted {
        attempts: u64,
    },
    /// Expected attempts exceed what one re-randomization window allows.
    Infeasible {
        max_attempts: u64,
    },
}

/// Try guesses from `[0, 2^budget.entropy_bits)` until `probe` reports a
/// pass. Each attempt advances the model clock by `per_attempt_ms`; a
/// re-randomization invalidates everything learned so far and restarts the
/// sweep.
pub fn brute_force_secret(
    p: &mut VictimProcess,
    budget: EntropyBudget,
    order: GuessOrder,
    mut probe: impl FnMut(&mut VictimProcess, u64) -> Result<bool, HarnessError>,
) -> Result<BruteForce, HarnessError> {
    if let (false, Some(max)) = (budget.feasible(), budget.max_attempts_in_window()) {
        return Ok(BruteForce::Infeasible { max_attempts: max });
    }
    let n = budget.entropy_bits;
    assert!(
        (1..=40).contains(&n),
        "brute-force space of {n} bits is not simulable"
    );
    let space = 1u64 << n;
    let perm = match order {
        GuessOrder::Permuted(seed) => Some(Permutation::new(seed, n)),
        GuessOrder::Ascending => None,
    };
    // Knowledge resets bound the number of restarts.
    let cap = space.saturating_mul(4);
    let mut attempts = 0u64;
    let mut i = 0u64;
    while attempts < cap {
        if i == space {
            if p.morpheus.is_none() {
                break;
            }
            i = 0;
        }
        let guess = perm.map_or(i, |perm| perm.get(i));
        i += 1;
        attempts += 1;
        let now = attempts as f64 * budget.per_attempt_ms;
        if probe(p, guess)? {
            return Ok(BruteForce::Found { guess, attempts });
        }
        if p.tick(now) {
            i = 0;
        }
    }
    Ok(BruteForce::Exhausted { attempts })
}
