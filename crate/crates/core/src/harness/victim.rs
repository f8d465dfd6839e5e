//! The victim program: one code image with every vulnerable site the
//! attacks need, plus the global slots through which the attacker feeds
//! inputs.

use crate::mitigation::{Canary, CheckPlacement};
use crate::sim::isa::{r, AluOp, CheckOp, Operand, Program, ProgramBuilder, Reg};
use crate::sim::layout::{CODE_BASE, GLOBALS_BASE, HEAP_BASE, PROBE_BASE};
use crate::Va;

/// Reference copy of the stack canary.
pub const CANARY_GLOBAL: Va = GLOBALS_BASE;
pub const MASK_SLOT: Va = GLOBALS_BASE + 0x80;
pub const BASE_SLOT: Va = GLOBALS_BASE + 0x88;
pub const W_BASE_SLOT: Va = GLOBALS_BASE + 0xc0;
pub const W_X_SLOT: Va = GLOBALS_BASE + 0xc8;
pub const W_Y_SLOT: Va = GLOBALS_BASE + 0xd0;
/// Object pointer used by the indirect-call site.
pub const OBJ_PTR_SLOT: Va = GLOBALS_BASE + 0x100;
pub const INPUT_LEN_SLOT: Va = GLOBALS_BASE + 0x140;
pub const INPUT_BUF: Va = GLOBALS_BASE + 0x200;
pub const INPUT_MAX_WORDS: u64 = 32;
/// `cond` and `x` share cache set 17 with the C3 victim object, which gives
/// Prime+Probe its baseline of two misses.
pub const COND_SLOT: Va = GLOBALS_BASE + 0x440;
pub const X_SLOT: Va = GLOBALS_BASE + 0x1440;
pub const PTR_A_SLOT: Va = GLOBALS_BASE + 0x800;
pub const PTR_B_SLOT: Va = GLOBALS_BASE + 0x808;
/// Holds a code pointer, used as a neutral dereference target.
pub const FIXTURE_SLOT: Va = GLOBALS_BASE + 0x900;

/// C3 victim object (`struct { void (*fp)(); }`), in cache set 17.
pub const C3_OBJECT: Va = HEAP_BASE + 0x3_0440;
pub const AOS_A: Va = HEAP_BASE + 0x1000;
pub const AOS_A_LEN: u64 = 64;
pub const AOS_B: Va = HEAP_BASE + 0x1040;
pub const AOS_B_LEN: u64 = 8;
pub const CALIFORMS_OBJECT: Va = HEAP_BASE + 0x2000;
pub const TAGGED_OBJECT: Va = HEAP_BASE + 0x3000;

/// Size of the overflowable stack buffer in `vuln`.
pub const VULN_LOCALS: u64 = 16;

/// Which Spectre gadget variant to run.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum GadgetShape {
    /// `if (cond) { y = ld.b [base + x]; z = ld [probe + (y & mask) * 64] }`
    TwoLoad,
    /// `if (cond) { y = ld.q [base + x]; call y }`
    Jump,
}

impl GadgetShape {
    pub const ALL: [GadgetShape; 2] = [GadgetShape::TwoLoad, GadgetShape::Jump];

    pub fn entry(self) -> &'static str {
        match self {
            GadgetShape::TwoLoad => "gadget",
            GadgetShape::Jump => "jump_gadget",
        }
    }

    pub fn branch_symbol(self) -> &'static str {
        match self {
            GadgetShape::TwoLoad => "gadget_br",
            GadgetShape::Jump => "jump_gadget_br",
        }
    }

    /// Trace label of the op that transmits `y`.
    pub fn transmit_label(self) -> &'static str {
        match self {
            GadgetShape::TwoLoad => "ld_y",
            GadgetShape::Jump => "fetch_y",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GadgetShape::TwoLoad => "two_load",
            GadgetShape::Jump => "jump",
        }
    }
}

/// Inputs the attacker writes before running a gadget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GadgetInputs {
    pub cond: u64,
    pub base: u64,
    pub x: u64,
    pub mask: u64,
}

/// The assembled victim. `pac_checks` inserts an authenticate op ahead of
/// the gadget's first load.
#[derive(Debug, Clone)]
pub struct VictimTemplate {
    pub program: Program,
    pub pac_checks: bool,
}

impl VictimTemplate {
    pub fn build(pac_checks: bool) -> Self {
        let mut b = ProgramBuilder::new(CODE_BASE);
        let canary = Canary {
            value: 0,
            global: CANARY_GLOBAL,
        };

        emit_gadget(&mut b, GadgetShape::TwoLoad, pac_checks);
        emit_gadget(&mut b, GadgetShape::Jump, pac_checks);

        // Non-adjacent overflow: alloc1[x] = y.
        b.symbol("write_site");
        b.load_abs(r(1), r(10), W_BASE_SLOT, 8);
        b.load_abs(r(2), r(10), W_X_SLOT, 8);
        b.load_abs(r(3), r(10), W_Y_SLOT, 8);
        b.alu(AluOp::Shl, r(2), r(2), 3u64);
        b.alu(AluOp::Add, r(4), r(1), r(2));
        b.tag("overflow_store").store(r(3), r(4), 0, 8);
        b.halt();

        // Indirect call through an object's function pointer: obj->fp().
        b.symbol("dispatch");
        b.load_abs(r(1), r(10), OBJ_PTR_SLOT, 8);
        b.tag("fp_load").load(r(2), r(1), 0, 8);
        b.tag("fp_call").call_reg(r(2));
        b.halt();

        // Adjacent overflow: copy attacker words into a 16-byte stack buffer.
        b.symbol("vuln_entry");
        b.call("vuln");
        b.halt();
        b.symbol("vuln");
        canary.emit_prologue(&mut b, VULN_LOCALS);
        b.load_abs(r(1), r(10), INPUT_LEN_SLOT, 8);
        b.mov(r(2), INPUT_BUF);
        b.mov(r(3), Reg::SP);
        b.mov(r(4), 0u64);
        b.mov(r(9), 1u64);
        b.symbol("copy_loop");
        b.alu(AluOp::Ltu, r(5), r(4), r(1));
        b.alu(AluOp::Eq, r(5), r(5), 0u64);
        b.branch(r(5), "copy_done");
        b.load(r(6), r(2), 0, 8);
        b.tag("overflow_copy").store(r(6), r(3), 0, 8);
        b.alu(AluOp::Add, r(2), r(2), 8u64);
        b.alu(AluOp::Add, r(3), r(3), 8u64);
        b.alu(AluOp::Add, r(4), r(4), 1u64);
        b.branch(r(9), "copy_loop");
        b.symbol("copy_done");
        canary.emit_epilogue(&mut b, VULN_LOCALS, "stack_chk_fail");
        Canary::emit_fail_handler(&mut b, "stack_chk_fail");

        b.symbol("correct_func");
        b.tag("correct_func").ret();
        b.symbol("landing");
        b.tag("landing").halt();
        // No legitimate control flow reaches `win`.
        b.symbol("win");
        b.tag("win").win();
        b.halt();

        Self {
            program: b.build(),
            pac_checks,
        }
    }

    pub fn symbol(&self, name: &str) -> Va {
        self.program
            .symbol(name)
            .unwrap_or_else(|| panic!("victim has no symbol {name}"))
    }

    pub fn win_addr(&self) -> Va {
        self.symbol("win")
    }

    pub fn correct_func(&self) -> Va {
        self.symbol("correct_func")
    }

    pub fn landing(&self) -> Va {
        self.symbol("landing")
    }

    pub fn branch_pc(&self, shape: GadgetShape) -> Va {
        self.symbol(shape.branch_symbol())
    }
}

/// Placement of the explicit authenticate op, for graph construction.
pub const PAC_CHECK_PLACEMENT: CheckPlacement = CheckPlacement::SequentialGuard;

fn emit_gadget(b: &mut ProgramBuilder, shape: GadgetShape, pac_checks: bool) {
    let end = format!("{}_end", shape.entry());
    b.symbol(shape.entry());
    b.load_abs(r(1), r(10), X_SLOT, 8);
    b.load_abs(r(2), r(10), MASK_SLOT, 8);
    b.load_abs(r(3), r(10), BASE_SLOT, 8);
    b.load_abs(r(4), r(10), COND_SLOT, 8);
    b.alu(AluOp::Eq, r(5), r(4), 0u64);
    b.symbol(shape.branch_symbol());
    b.tag("gadget_branch").branch(r(5), &end);
    b.alu(AluOp::Add, r(6), r(3), r(1));
    if pac_checks {
        b.tag("chk_ld_x").check(CheckOp::PacAuth {
            dst: r(6),
            src: r(6),
            ctx: Operand::Imm(0),
        });
    }
    match shape {
        GadgetShape::TwoLoad => {
            b.tag("ld_x").load(r(7), r(6), 0, 1);
            b.alu(AluOp::And, r(7), r(7), r(2));
            b.alu(AluOp::Shl, r(7), r(7), 6u64);
            b.mov(r(8), PROBE_BASE);
            b.alu(AluOp::Add, r(8), r(8), r(7));
            b.tag("ld_y").load(r(9), r(8), 0, 8);
        }
        GadgetShape::Jump => {
            b.tag("ld_x").load(r(7), r(6), 0, 8);
            b.tag("fetch_y").call_reg(r(7));
        }
    }
    b.symbol(&end);
    b.halt();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::CacheGeometry;

    #[test]
    fn call_targets_stay_out_of_the_prime_probe_set() {
        let v = VictimTemplate::build(true);
        let g = CacheGeometry::default();
        for sym in ["win", "correct_func", "landing", "vuln"] {
            assert_ne!(g.index(v.symbol(sym)), 17, "{sym}");
        }
        assert!(v.program.len_bytes() <= crate::sim::layout::CODE_LEN);
    }

    #[test]
    fn slot_sets() {
        let g = CacheGeometry::default();
        assert_eq!(g.index(COND_SLOT), 17);
        assert_eq!(g.index(X_SLOT), 17);
        assert_eq!(g.index(C3_OBJECT), 17);
        for s in [MASK_SLOT, BASE_SLOT, OBJ_PTR_SLOT, CANARY_GLOBAL] {
            assert_ne!(g.index(s), 17);
        }
    }
}
