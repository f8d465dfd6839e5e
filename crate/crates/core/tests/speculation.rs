use proptest::prelude::*;
use ssb_core::sim::isa::{r, AluOp, ProgramBuilder};
use ssb_core::sim::layout::{CODE_BASE, GLOBALS_BASE};
use ssb_core::sim::{ExecutionTrace, Machine, MachineConfig, NestedBranchPolicy, SimError, Status};

const COND: u64 = GLOBALS_BASE + 0x1000;
const SLOW: u64 = GLOBALS_BASE + 0x1800;

#[derive(Debug, Clone)]
enum BodyOp {
    Alu(u8, u8, u8, u64),
    Store(u8, u8),
    Load(u8, u8),
    Win,
}

fn body_op() -> impl Strategy<Value = BodyOp> {
    prop_oneof![
        (0u8..11, 1u8..9, 1u8..9, any::<u64>())
            .prop_map(|(op, d, a, imm)| BodyOp::Alu(op, d, a, imm)),
        (1u8..9, 0u8..32).prop_map(|(s, slot)| BodyOp::Store(s, slot)),
        (1u8..9, 0u8..32).prop_map(|(d, slot)| BodyOp::Load(d, slot)),
        Just(BodyOp::Win),
    ]
}

const ALU: [AluOp; 11] = [
    AluOp::Add,
    AluOp::Sub,
    AluOp::Mul,
    AluOp::And,
    AluOp::Or,
    AluOp::Xor,
    AluOp::Shl,
    AluOp::Shr,
    AluOp::Eq,
    AluOp::Ne,
    AluOp::Ltu,
];

/// Registers r1..r8 get seeded values, the branch on a cold load is taken
/// architecturally but predicted not-taken, so `body` only ever runs on the
/// wrong path. With `body = None` the same number of no-op moves is emitted.
fn program(seed: u64, body: Option<&[BodyOp]>, len: usize) -> ssb_core::sim::isa::Program {
    let mut b = ProgramBuilder::new(CODE_BASE);
    for i in 1..9u8 {
        b.mov(r(i), seed.wrapping_mul(i as u64 + 1));
    }
    b.mov(r(9), GLOBALS_BASE);
    b.load_abs(r(12), r(10), COND, 8);
    b.tag("br").branch(r(12), "end");
    for i in 0..len {
        match body.map(|ops| &ops[i]) {
            None => b.mov(r(13), r(13)),
            Some(BodyOp::Alu(op, d, a, imm)) => b.alu(ALU[*op as usize], r(*d), r(*a), *imm),
            Some(BodyOp::Store(s, slot)) => b.store(r(*s), r(9), *slot as i64 * 8, 8),
            Some(BodyOp::Load(d, slot)) => b.load(r(*d), r(9), *slot as i64 * 8, 8),
            Some(BodyOp::Win) => b.win(),
        };
    }
    b.symbol("end").halt();
    b.build()
}

fn machine(config: MachineConfig, seed: u64) -> Machine {
    let mut m = Machine::new(config);
    m.state.memory.write(COND, 8, 1);
    for slot in 0..32 {
        m.state
            .memory
            .write(GLOBALS_BASE + slot * 8, 8, seed ^ slot);
    }
    m
}

fn run(
    config: &MachineConfig,
    seed: u64,
    body: Option<&[BodyOp]>,
    len: usize,
) -> (Machine, ExecutionTrace) {
    let p = program(seed, body, len);
    let mut m = machine(config.clone(), seed);
    let t = m.run(&p, CODE_BASE).unwrap();
    (m, t)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn squash_restores_architectural_state(seed in any::<u64>(), body in prop::collection::vec(body_op(), 1..40)) {
        let cfg = MachineConfig::default();
        let (m, t) = run(&cfg, seed, Some(&body), body.len());
        let (clean, _) = run(&cfg, seed, None, body.len());
        prop_assert_eq!(t.windows.len(), 1);
        let w = &t.windows[0];
        prop_assert!(!w.correct);
        prop_assert_eq!(w.arch_hash_at_open, w.arch_hash_at_resolve);
        prop_assert_eq!(m.state.registers, clean.state.registers);
        prop_assert_eq!(&m.state.memory, &clean.state.memory);
        prop_assert!(!t.hijacked);
        prop_assert!(t.crash.is_none());
        for &i in &w.issued_ops {
            prop_assert_eq!(t.events[i].status, Status::Squashed);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn runs_are_deterministic(seed in any::<u64>(), body in prop::collection::vec(body_op(), 1..40)) {
        let cfg = MachineConfig::default();
        let (_, a) = run(&cfg, seed, Some(&body), body.len());
        let (_, b) = run(&cfg, seed, Some(&body), body.len());
        prop_assert_eq!(a.to_jsonl(), b.to_jsonl());
    }

    #[test]
    fn invisible_speculation_rolls_the_cache_back(seed in any::<u64>(), body in prop::collection::vec(body_op(), 1..40)) {
        let mut cfg = MachineConfig::default();
        cfg.countermeasures.invisible_spec = true;
        let (_, t) = run(&cfg, seed, Some(&body), body.len());
        let w = &t.windows[0];
        prop_assert_eq!(&w.cache_lines_at_open, &w.cache_lines_at_resolve);
    }
}

#[test]
fn squashed_loads_leave_cache_footprints() {
    let body = [BodyOp::Load(1, 3)];
    let (m, t) = run(&MachineConfig::default(), 5, Some(&body), 1);
    let w = &t.windows[0];
    assert!(m.cache.contains(GLOBALS_BASE + 3 * 8));
    assert_ne!(w.cache_lines_at_open, w.cache_lines_at_resolve);
}

#[test]
fn win_in_a_squashed_window_is_not_committed() {
    let (_, t) = run(&MachineConfig::default(), 1, Some(&[BodyOp::Win]), 1);
    assert!(!t.hijacked);
    let win = t.events.iter().find(|e| e.op == "win").expect("win issued");
    assert_eq!(win.status, Status::Squashed);
}

#[test]
fn correctly_predicted_win_commits() {
    let mut b = ProgramBuilder::new(CODE_BASE);
    b.load_abs(r(12), r(10), COND, 8);
    b.branch(r(12), "end");
    b.win();
    b.symbol("end").halt();
    let p = b.build();
    let mut m = Machine::new(MachineConfig::default());
    // cond = 0: falls through, matching the initial not-taken prediction.
    let t = m.run(&p, CODE_BASE).unwrap();
    assert!(t.windows[0].correct);
    assert!(t.hijacked);
}

fn nested_program() -> ssb_core::sim::isa::Program {
    let mut b = ProgramBuilder::new(CODE_BASE);
    b.load_abs(r(12), r(10), COND, 8);
    b.branch(r(12), "end");
    b.load_abs(r(13), r(11), SLOW, 8);
    b.branch(r(13), "end");
    b.win();
    b.symbol("end").halt();
    b.build()
}

#[test]
fn nested_unready_branch_errors_under_error_policy() {
    let cfg = MachineConfig {
        nested_branch: NestedBranchPolicy::Error,
        ..MachineConfig::default()
    };
    let mut m = machine(cfg, 0);
    assert!(matches!(
        m.run(&nested_program(), CODE_BASE),
        Err(SimError::NestedWindowUnsupported(_))
    ));
}

#[test]
fn nested_unready_branch_stalls_by_default() {
    let mut m = machine(MachineConfig::default(), 0);
    let t = m.run(&nested_program(), CODE_BASE).unwrap();
    assert_eq!(t.windows.len(), 1);
    assert!(!t.hijacked);
}
