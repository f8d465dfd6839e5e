//! Micro-op encoding and a small label-resolving program builder.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ExceptionKind;
use crate::Va;

pub const NUM_REGS: usize = 16;
/// Every micro-op occupies four bytes of the code segment.
pub const INSTR_BYTES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Reg(u8);

impl Reg {
    pub const SP: Reg = Reg(15);

    pub const fn new(index: u8) -> Self {
        assert!((index as usize) < NUM_REGS, "register index out of range");
        Reg(index)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Reg::SP {
            write!(f, "sp")
        } else {
            write!(f, "r{}", self.0)
        }
    }
}

/// Shorthand for `Reg::new`.
pub const fn r(index: u8) -> Reg {
    Reg::new(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operand {
    Reg(Reg),
    Imm(u64),
}

impl From<Reg> for Operand {
    fn from(r: Reg) -> Self {
        Operand::Reg(r)
    }
}

impl From<u64> for Operand {
    fn from(v: u64) -> Self {
        Operand::Imm(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    /// 1 if equal, else 0.
    Eq,
    /// 1 if not equal, else 0.
    Ne,
    /// Unsigned less-than, 1 or 0.
    Ltu,
}

impl AluOp {
    pub fn apply(self, a: u64, b: u64) -> u64 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Mul => a.wrapping_mul(b),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Shl => a.wrapping_shl(b as u32),
            AluOp::Shr => a.wrapping_shr(b as u32),
            AluOp::Eq => (a == b) as u64,
            AluOp::Ne => (a != b) as u64,
            AluOp::Ltu => (a < b) as u64,
        }
    }
}

/// Explicit security-check micro-ops. Hardware checks that ride on every
/// memory access (bounds, tags, mapping) are not ops; they are applied by the
/// machine's protection unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckOp {
    /// Unconditional architectural failure, e.g. the stack-protector failure
    /// handler.
    Fail(ExceptionKind),
    /// `dst = src` with the PAC of `(src, ctx)` placed in the upper bits.
    PacSign { dst: Reg, src: Reg, ctx: Operand },
    /// Verify the PAC of `src`; on success `dst` is the stripped pointer.
    PacAuth { dst: Reg, src: Reg, ctx: Operand },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MicroOp {
    Alu {
        op: AluOp,
        dst: Reg,
        a: Operand,
        b: Operand,
    },
    /// `dst = mem[base + offset]`, `width` bytes, zero-extended.
    Load {
        dst: Reg,
        base: Reg,
        offset: i64,
        width: u8,
    },
    /// `mem[base + offset] = src`, low `width` bytes.
    Store {
        src: Operand,
        base: Reg,
        offset: i64,
        width: u8,
    },
    /// Jump to `target` when `cond != 0`.
    Branch {
        cond: Reg,
        target: Va,
    },
    /// Push the return address on the stack and jump to `target`.
    Call {
        target: Operand,
    },
    Ret,
    SecurityCheck(CheckOp),
    /// Marker for the attacker's goal: committing it means control flow was
    /// hijacked.
    Win,
    Halt,
}

impl MicroOp {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            MicroOp::Alu { .. } => "alu",
            MicroOp::Load { .. } => "load",
            MicroOp::Store { .. } => "store",
            MicroOp::Branch { .. } => "branch",
            MicroOp::Call { .. } => "call",
            MicroOp::Ret => "ret",
            MicroOp::SecurityCheck(_) => "check",
            MicroOp::Win => "win",
            MicroOp::Halt => "halt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instr {
    pub op: MicroOp,
    pub label: Option<String>,
}

/// A program placed at `base` in the code segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub base: Va,
    pub instrs: Vec<Instr>,
    pub symbols: BTreeMap<String, Va>,
}

impl Program {
    pub fn from_ops(base: Va, ops: impl IntoIterator<Item = MicroOp>) -> Self {
        Self {
            base,
            instrs: ops
                .into_iter()
                .map(|op| Instr { op, label: None })
                .collect(),
            symbols: BTreeMap::new(),
        }
    }

    pub fn len_bytes(&self) -> u64 {
        self.instrs.len() as u64 * INSTR_BYTES
    }

    pub fn fetch(&self, pc: Va) -> Option<&Instr> {
        if pc < self.base || !(pc - self.base).is_multiple_of(INSTR_BYTES) {
            return None;
        }
        self.instrs.get(((pc - self.base) / INSTR_BYTES) as usize)
    }

    pub fn symbol(&self, name: &str) -> Option<Va> {
        self.symbols.get(name).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }
}

enum Fixup {
    Branch(String),
    Call(String),
    MovAddr(String),
}

/// Emits micro-ops and resolves symbolic branch/call targets at `build`.
pub struct ProgramBuilder {
    base: Va,
    instrs: Vec<Instr>,
    symbols: BTreeMap<String, Va>,
    fixups: Vec<(usize, Fixup)>,
    next_label: Option<String>,
}

impl ProgramBuilder {
    pub fn new(base: Va) -> Self {
        Self {
            base,
            instrs: Vec::new(),
            symbols: BTreeMap::new(),
            fixups: Vec::new(),
            next_label: None,
        }
    }

    pub fn pc(&self) -> Va {
        self.base + self.instrs.len() as u64 * INSTR_BYTES
    }

    /// Define symbol `name` at the current position.
    pub fn symbol(&mut self, name: &str) -> &mut Self {
        let pc = self.pc();
        let prev = self.symbols.insert(name.to_string(), pc);
        assert!(prev.is_none(), "duplicate symbol {name}");
        self
    }

    /// Attach a trace label to the next emitted op.
    pub fn tag(&mut self, label: &str) -> &mut Self {
        self.next_label = Some(label.to_string());
        self
    }

    pub fn op(&mut self, op: MicroOp) -> &mut Self {
        let label = self.next_label.take();
        self.instrs.push(Instr { op, label });
        self
    }

    pub fn alu(
        &mut self,
        op: AluOp,
        dst: Reg,
        a: impl Into<Operand>,
        b: impl Into<Operand>,
    ) -> &mut Self {
        self.op(MicroOp::Alu {
            op,
            dst,
            a: a.into(),
            b: b.into(),
        })
    }

    pub fn mov(&mut self, dst: Reg, v: impl Into<Operand>) -> &mut Self {
        self.alu(AluOp::Or, dst, v, 0u64)
    }

    /// `dst = address of symbol`, resolved at build time.
    pub fn mov_addr(&mut self, dst: Reg, symbol: &str) -> &mut Self {
        self.fixups
            .push((self.instrs.len(), Fixup::MovAddr(symbol.to_string())));
        self.mov(dst, 0u64)
    }

    pub fn load(&mut self, dst: Reg, base: Reg, offset: i64, width: u8) -> &mut Self {
        self.op(MicroOp::Load {
            dst,
            base,
            offset,
            width,
        })
    }

    /// Load from an absolute address through `scratch`.
    pub fn load_abs(&mut self, dst: Reg, scratch: Reg, addr: Va, width: u8) -> &mut Self {
        self.mov(scratch, addr);
        self.load(dst, scratch, 0, width)
    }

    pub fn store(
        &mut self,
        src: impl Into<Operand>,
        base: Reg,
        offset: i64,
        width: u8,
    ) -> &mut Self {
        self.op(MicroOp::Store {
            src: src.into(),
            base,
            offset,
            width,
        })
    }

    pub fn branch(&mut self, cond: Reg, target: &str) -> &mut Self {
        self.fixups
            .push((self.instrs.len(), Fixup::Branch(target.to_string())));
        self.op(MicroOp::Branch { cond, target: 0 })
    }

    pub fn call(&mut self, target: &str) -> &mut Self {
        self.fixups
            .push((self.instrs.len(), Fixup::Call(target.to_string())));
        self.op(MicroOp::Call {
            target: Operand::Imm(0),
        })
    }

    pub fn call_reg(&mut self, target: Reg) -> &mut Self {
        self.op(MicroOp::Call {
            target: Operand::Reg(target),
        })
    }

    pub fn ret(&mut self) -> &mut Self {
        self.op(MicroOp::Ret)
    }

    pub fn check(&mut self, check: CheckOp) -> &mut Self {
        self.op(MicroOp::SecurityCheck(check))
    }

    pub fn win(&mut self) -> &mut Self {
        self.op(MicroOp::Win)
    }

    pub fn halt(&mut self) -> &mut Self {
        self.op(MicroOp::Halt)
    }

    pub fn build(self) -> Program {
        let mut instrs = self.instrs;
        for (idx, fixup) in self.fixups {
            let resolve = |name: &String| {
                *self
                    .symbols
                    .get(name)
                    .unwrap_or_else(|| panic!("undefined symbol {name}"))
            };
            match (&mut instrs[idx].op, &fixup) {
                (MicroOp::Branch { target, .. }, Fixup::Branch(name)) => *target = resolve(name),
                (MicroOp::Call { target }, Fixup::Call(name)) => {
                    *target = Operand::Imm(resolve(name))
                }
                (MicroOp::Alu { a, .. }, Fixup::MovAddr(name)) => *a = Operand::Imm(resolve(name)),
                _ => unreachable!("fixup does not match op"),
            }
        }
        Program {
            base: self.base,
            instrs,
            symbols: self.symbols,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_resolves_forward_labels() {
        let mut b = ProgramBuilder::new(0x1000);
        b.branch(r(1), "end").mov(r(2), 5u64).symbol("end").halt();
        let p = b.build();
        assert_eq!(p.symbol("end"), Some(0x1008));
        match p.instrs[0].op {
            MicroOp::Branch { target, .. } => assert_eq!(target, 0x1008),
            _ => panic!(),
        }
        assert!(p.fetch(0x1002).is_none());
        assert_eq!(p.fetch(0x1008).unwrap().op, MicroOp::Halt);
    }

    #[test]
    fn alu_semantics() {
        assert_eq!(AluOp::Sub.apply(0, 1), u64::MAX);
        assert_eq!(AluOp::Eq.apply(3, 3), 1);
        assert_eq!(AluOp::Ltu.apply(3, 2), 0);
        assert_eq!(AluOp::Shl.apply(1, 6), 64);
    }
}
