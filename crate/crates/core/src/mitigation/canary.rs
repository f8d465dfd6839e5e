use rand::Rng;

use super::CheckOutcome;
use crate::sim::isa::{r, AluOp, CheckOp, ProgramBuilder, Reg};
use crate::sim::{ExceptionKind, Memory};
use crate::Va;

/// Stack frame of a protected function: locals first, then the canary,
/// then the saved return address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackFrame {
    pub locals: Va,
    pub locals_len: u64,
}

impl StackFrame {
    pub fn canary_slot(&self) -> Va {
        self.locals + self.locals_len
    }

    pub fn return_slot(&self) -> Va {
        self.canary_slot() + 8
    }
}

/// Stack-smashing protection: a secret 8-byte value kept in a global and
/// copied between the locals and the saved return address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Canary {
    pub value: u64,
    /// Where the reference copy lives (thread-local storage in real systems).
    pub global: Va,
}

impl Canary {
    pub fn draw<R: Rng>(rng: &mut R, global: Va) -> Self {
        Self {
            value: rng.gen(),
            global,
        }
    }

    /// Publish the reference value at process start.
    pub fn publish(&self, mem: &mut Memory) {
        mem.write(self.global, 8, self.value);
    }

    pub fn install(&self, frame: StackFrame, mem: &mut Memory) {
        mem.write(frame.canary_slot(), 8, self.value);
    }

    pub fn check(&self, frame: StackFrame, mem: &Memory) -> CheckOutcome {
        CheckOutcome::from_bool(mem.read(frame.canary_slot(), 8) == self.value)
    }

    /// Prologue: reserve `locals_len + 8` bytes and copy the canary in.
    /// Clobbers r12, r13.
    pub fn emit_prologue(&self, b: &mut ProgramBuilder, locals_len: u64) {
        b.alu(AluOp::Sub, Reg::SP, Reg::SP, locals_len + 8);
        b.load_abs(r(12), r(13), self.global, 8);
        b.store(r(12), Reg::SP, locals_len as i64, 8);
    }

    /// Epilogue: compare the frame copy against the reference, fail through
    /// the stack-check handler on mismatch, otherwise pop and return.
    /// Clobbers r11..r13.
    pub fn emit_epilogue(&self, b: &mut ProgramBuilder, locals_len: u64, fail_symbol: &str) {
        b.tag("canary_load")
            .load(r(11), Reg::SP, locals_len as i64, 8);
        b.load_abs(r(12), r(13), self.global, 8);
        b.alu(AluOp::Ne, r(13), r(11), r(12));
        b.tag("canary_branch").branch(r(13), fail_symbol);
        b.alu(AluOp::Add, Reg::SP, Reg::SP, locals_len + 8);
        b.ret();
    }

    pub fn emit_fail_handler(b: &mut ProgramBuilder, symbol: &str) {
        b.symbol(symbol);
        b.tag("stack_chk_fail")
            .check(CheckOp::Fail(ExceptionKind::CheckFailure));
        b.halt();
    }
}
