//! In-order issue machine with branch speculation.
//!
//! Ops issue one per cycle. A branch whose condition register is not yet
//! ready (it depends on an outstanding load) is predicted and opens a
//! speculation window that lasts until the condition's ready cycle, up to
//! `max_window` ops. A wrong prediction squashes the window: registers and
//! memory roll back from a snapshot/undo log, deferred exceptions and `Win`
//! ops are dropped, and cache effects stay unless invisible speculation is
//! enabled.

pub mod isa;
pub mod layout;
mod state;
mod trace;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheGeometry, CacheState};
use crate::crypto::{mix, PacHasher};
use crate::mitigation::{pa_auth, pa_sign, CheckPlacement, Protection, TaggedPointer};
use crate::Va;
use isa::{CheckOp, Instr, MicroOp, Operand, Program, Reg, INSTR_BYTES, NUM_REGS};

pub use state::{MachineState, Memory, Segment};
pub use trace::{
    CacheEvent, CheckRecord, CrashReport, ExecutionTrace, SpecWindow, Status, TraceEvent,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExceptionKind {
    UnmappedAccess,
    RedzoneAccess,
    CheckFailure,
    AuthFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("instruction fetch from non-executable address {0:#x}")]
    UnmappedFetch(Va),
    #[error("branch at {0:#x} needs a second speculation window")]
    NestedWindowUnsupported(Va),
    #[error("step limit of {0} issued ops exceeded")]
    StepLimit(u64),
    #[error("invalid program: {0}")]
    InvalidProgram(String),
}

/// What to do when a branch with an unready condition issues while a window
/// is already open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NestedBranchPolicy {
    /// Stop issuing until the open window resolves.
    #[default]
    Stall,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Countermeasures {
    /// Roll the cache back on squash.
    pub invisible_spec: bool,
    /// Turn every sequentially guarded check into a parallel one.
    pub parallelize_checks: bool,
    /// A failed control-transfer fetch continues at
    /// `code_start + (target mod code_len)` instead of stalling.
    pub modulo_fetch_aslr: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachineConfig {
    pub seed: u64,
    pub cache: CacheGeometry,
    pub max_window: usize,
    pub train_count: u32,
    pub nested_branch: NestedBranchPolicy,
    pub step_limit: u64,
    pub countermeasures: Countermeasures,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cache: CacheGeometry::default(),
            max_window: 64,
            train_count: 64,
            nested_branch: NestedBranchPolicy::Stall,
            step_limit: 1_000_000,
            countermeasures: Countermeasures::default(),
        }
    }
}

impl MachineConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.cache.validate()?;
        if self.max_window == 0 {
            return Err("machine.max_window must be > 0".into());
        }
        if self.step_limit == 0 {
            return Err("machine.step_limit must be > 0".into());
        }
        Ok(())
    }
}

/// Per-branch 2-bit saturating counters. Counters start at 1 (weakly
/// not-taken); 2 and 3 predict taken.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BranchPredictor {
    counters: BTreeMap<Va, u8>,
}

impl BranchPredictor {
    const INITIAL: u8 = 1;

    pub fn counter(&self, pc: Va) -> u8 {
        self.counters.get(&pc).copied().unwrap_or(Self::INITIAL)
    }

    pub fn predict(&self, pc: Va) -> bool {
        self.counter(pc) >= 2
    }

    pub fn update(&mut self, pc: Va, taken: bool) {
        let c = self.counter(pc);
        let next = if taken {
            (c + 1).min(3)
        } else {
            c.saturating_sub(1)
        };
        self.counters.insert(pc, next);
    }

    /// Execute the branch at `pc` `n` times in direction `taken`.
    pub fn train(&mut self, pc: Va, taken: bool, n: u32) {
        for _ in 0..n {
            self.update(pc, taken);
        }
    }
}

/// A simulated core plus the process it runs. Memory, cache and predictor
/// state persist across [`Machine::run`] calls; registers do not.
#[derive(Debug, Clone)]
pub struct Machine {
    pub config: MachineConfig,
    pub state: MachineState,
    pub cache: CacheState,
    pub predictor: BranchPredictor,
    pub protection: Protection,
    pub pac: PacHasher,
    next_window_id: u64,
}

impl Machine {
    pub fn new(config: MachineConfig) -> Self {
        let mut state = MachineState::new(config.seed);
        state.segments = layout::default_segments();
        Self::with_state(config, state)
    }

    pub fn with_state(config: MachineConfig, state: MachineState) -> Self {
        Self {
            cache: CacheState::new(config.cache),
            pac: PacHasher::new(mix(config.seed, 0x5041), PacHasher::DEFAULT_BITS),
            predictor: BranchPredictor::default(),
            protection: Protection::None,
            state,
            config,
            next_window_id: 0,
        }
    }

    /// Train the branch at `pc` with the configured repetition count.
    pub fn train_branch(&mut self, pc: Va, taken: bool) {
        self.predictor.train(pc, taken, self.config.train_count);
    }

    /// Run `program` from `entry` until `Halt`, a crash, or an error.
    /// Registers start at zero with `sp` at the top of the stack.
    pub fn run(&mut self, program: &Program, entry: Va) -> Result<ExecutionTrace, SimError> {
        if program.is_empty() {
            return Err(SimError::InvalidProgram("program has no ops".into()));
        }
        self.state.registers = [0; NUM_REGS];
        self.state.registers[Reg::SP.index()] = layout::stack_top();
        let mut run = Run {
            program,
            ready: [0; NUM_REGS],
            pc: entry,
            events: Vec::new(),
            windows: Vec::new(),
            window: None,
            crash: None,
            steps: 0,
            m: self,
        };
        run.go()?;
        Ok(ExecutionTrace {
            events: run.events,
            windows: run.windows,
            crash: run.crash,
            hijacked: run.m.state.hijacked,
            final_state: None,
        })
    }
}

/// Run `program` from its base on a fresh machine with the default layout.
pub fn execute(program: &Program, config: &MachineConfig) -> Result<ExecutionTrace, SimError> {
    config.validate().map_err(SimError::InvalidProgram)?;
    let mut m = Machine::new(config.clone());
    let mut trace = m.run(program, program.base)?;
    trace.final_state = Some(m.state);
    Ok(trace)
}

enum Flow {
    Continue,
    Halt,
    Crash,
}

enum Access {
    Value(u64, u64),
    Stalled,
    Crashed,
}

struct OpenWindow {
    record: SpecWindow,
    actual_taken: bool,
    correct_pc: Va,
    resolve_cycle: u64,
    stalled: bool,
    regs: [u64; NUM_REGS],
    ready: [u64; NUM_REGS],
    undo: Vec<(Va, Option<u8>)>,
    cache: Option<CacheState>,
    wins: Vec<usize>,
    /// `(event index, kind, pc)` of every exception recorded in the window.
    deferred: Vec<(usize, ExceptionKind, Va)>,
}

struct Run<'a> {
    m: &'a mut Machine,
    program: &'a Program,
    ready: [u64; NUM_REGS],
    pc: Va,
    events: Vec<TraceEvent>,
    windows: Vec<SpecWindow>,
    window: Option<OpenWindow>,
    crash: Option<CrashReport>,
    steps: u64,
}

impl Run<'_> {
    fn go(&mut self) -> Result<(), SimError> {
        loop {
            if let Some(w) = &self.window {
                let due = w.stalled
                    || w.record.issued_ops.len() >= self.m.config.max_window
                    || self.m.state.cycle >= w.resolve_cycle;
                if due {
                    if self.resolve() {
                        return Ok(());
                    }
                    continue;
                }
            }
            self.steps += 1;
            if self.steps > self.m.config.step_limit {
                return Err(SimError::StepLimit(self.m.config.step_limit));
            }
            let instr = match self.program.fetch(self.pc) {
                Some(i) if self.m.state.is_executable(self.pc) => i.clone(),
                _ => match &mut self.window {
                    Some(w) => {
                        w.stalled = true;
                        continue;
                    }
                    None => return Err(SimError::UnmappedFetch(self.pc)),
                },
            };
            let flow = self.issue(&instr)?;
            self.m.state.cycle += 1;
            match flow {
                Flow::Continue => {}
                Flow::Halt | Flow::Crash => return Ok(()),
            }
        }
    }

    fn reg(&self, r: Reg) -> u64 {
        self.m.state.registers[r.index()]
    }

    fn operand(&self, o: Operand) -> u64 {
        match o {
            Operand::Reg(r) => self.reg(r),
            Operand::Imm(v) => v,
        }
    }

    fn operand_ready(&self, o: Operand) -> u64 {
        match o {
            Operand::Reg(r) => self.ready[r.index()],
            Operand::Imm(_) => 0,
        }
    }

    fn set_reg(&mut self, r: Reg, value: u64, ready: u64) {
        self.m.state.registers[r.index()] = value;
        self.ready[r.index()] = ready;
    }

    fn speculative(&self) -> bool {
        self.window.is_some()
    }

    fn placement(&self, p: CheckPlacement) -> CheckPlacement {
        if self.m.config.countermeasures.parallelize_checks && p == CheckPlacement::SequentialGuard
        {
            CheckPlacement::Parallel
        } else {
            p
        }
    }

    fn touch(&mut self, addr: Va) -> CacheEvent {
        let res = self.m.cache.access(addr);
        let g = self.m.cache.geometry();
        CacheEvent {
            line_addr: g.line(addr) * g.line_bytes,
            set: g.index(addr),
            hit: res.hit,
            latency: res.latency,
        }
    }

    fn write_mem(&mut self, addr: Va, bytes: &[u8]) {
        for (i, &b) in bytes.iter().enumerate() {
            let a = addr.wrapping_add(i as u64);
            if let Some(w) = &mut self.window {
                w.undo.push((a, self.m.state.memory.raw_byte(a)));
            }
            self.m.state.memory.write_byte(a, b);
        }
    }

    fn crash_now(&mut self, kind: ExceptionKind, deferred: bool) -> Flow {
        self.crash = Some(CrashReport {
            kind,
            pc: self.pc,
            cycle: self.m.state.cycle,
            deferred,
        });
        Flow::Crash
    }

    /// Record an exception for the op at event `ev`: deferred inside a
    /// window, a crash otherwise. `stall` stops the window from issuing
    /// further ops.
    fn raise(
        &mut self,
        ev: usize,
        kind: ExceptionKind,
        stall: bool,
        deferred_if_arch: bool,
    ) -> Flow {
        let pc = self.pc;
        match &mut self.window {
            Some(w) => {
                w.deferred.push((ev, kind, pc));
                w.record.deferred_exceptions.push((ev, kind));
                if stall {
                    w.stalled = true;
                }
                Flow::Continue
            }
            None => self.crash_now(kind, deferred_if_arch),
        }
    }

    fn open_window(
        &mut self,
        trigger_pc: Va,
        predicted: bool,
        actual: bool,
        target: Va,
        resolve_cycle: u64,
    ) {
        let fallthrough = trigger_pc + INSTR_BYTES;
        let id = self.m.next_window_id;
        self.m.next_window_id += 1;
        let record = SpecWindow {
            id,
            trigger_pc,
            predicted_taken: predicted,
            resolved: false,
            correct: predicted == actual,
            issued_ops: Vec::new(),
            deferred_exceptions: Vec::new(),
            arch_hash_at_open: self.m.state.arch_hash(),
            arch_hash_at_resolve: 0,
            cache_lines_at_open: self.m.cache.resident_lines(),
            cache_lines_at_resolve: Vec::new(),
        };
        self.window = Some(OpenWindow {
            record,
            actual_taken: actual,
            correct_pc: if actual { target } else { fallthrough },
            resolve_cycle,
            stalled: false,
            regs: self.m.state.registers,
            ready: self.ready,
            undo: Vec::new(),
            cache: self
                .m
                .config
                .countermeasures
                .invisible_spec
                .then(|| self.m.cache.clone()),
            wins: Vec::new(),
            deferred: Vec::new(),
        });
        self.pc = if predicted { target } else { fallthrough };
    }

    /// Resolve the open window. Returns true if committing it crashed.
    fn resolve(&mut self) -> bool {
        let mut w = self.window.take().expect("resolve without a window");
        self.m.state.cycle = self.m.state.cycle.max(w.resolve_cycle);
        self.m.predictor.update(w.record.trigger_pc, w.actual_taken);
        w.record.resolved = true;
        if w.record.correct {
            let mut commits: Vec<(usize, Option<(ExceptionKind, Va)>)> = w
                .wins
                .iter()
                .map(|&i| (i, None))
                .chain(w.deferred.iter().map(|&(i, k, pc)| (i, Some((k, pc)))))
                .collect();
            commits.sort_by_key(|c| c.0);
            for (_, exc) in commits {
                match exc {
                    None => self.m.state.hijacked = true,
                    Some((kind, pc)) => {
                        self.crash = Some(CrashReport {
                            kind,
                            pc,
                            cycle: self.m.state.cycle,
                            deferred: true,
                        });
                        break;
                    }
                }
            }
        } else {
            self.m.state.registers = w.regs;
            self.ready = w.ready;
            for &(addr, prev) in w.undo.iter().rev() {
                self.m.state.memory.restore_byte(addr, prev);
            }
            if let Some(cache) = w.cache.take() {
                self.m.cache = cache;
            }
            for &i in &w.record.issued_ops {
                self.events[i].status = Status::Squashed;
            }
            self.pc = w.correct_pc;
        }
        w.record.arch_hash_at_resolve = self.m.state.arch_hash();
        w.record.cache_lines_at_resolve = self.m.cache.resident_lines();
        self.windows.push(w.record);
        self.crash.is_some()
    }

    fn issue(&mut self, instr: &Instr) -> Result<Flow, SimError> {
        let ev = self.events.len();
        self.events.push(TraceEvent {
            cycle: self.m.state.cycle,
            pc: self.pc,
            op: instr.op.mnemonic().to_string(),
            status: Status::Committed,
            label: instr.label.clone(),
            window: self.window.as_ref().map(|w| w.record.id),
            addr: None,
            cache_event: None,
            check: None,
            substituted: false,
        });
        if let Some(w) = &mut self.window {
            w.record.issued_ops.push(ev);
        }
        let cycle = self.m.state.cycle;
        let next = self.pc + INSTR_BYTES;
        match instr.op {
            MicroOp::Alu { op, dst, a, b } => {
                let v = op.apply(self.operand(a), self.operand(b));
                let ready = self.operand_ready(a).max(self.operand_ready(b)).max(cycle) + 1;
                self.set_reg(dst, v, ready);
                self.pc = next;
            }
            MicroOp::Load {
                dst,
                base,
                offset,
                width,
            } => {
                let ptr = self.reg(base).wrapping_add(offset as u64);
                match self.data_access(ev, ptr, width, None) {
                    Access::Value(v, latency) => {
                        let ready = self.ready[base.index()].max(cycle) + latency;
                        self.set_reg(dst, v, ready);
                        self.pc = next;
                    }
                    Access::Stalled => {}
                    Access::Crashed => return Ok(Flow::Crash),
                }
            }
            MicroOp::Store {
                src,
                base,
                offset,
                width,
            } => {
                let ptr = self.reg(base).wrapping_add(offset as u64);
                let value = self.operand(src);
                match self.data_access(ev, ptr, width, Some(value)) {
                    Access::Value(..) => self.pc = next,
                    Access::Stalled => {}
                    Access::Crashed => return Ok(Flow::Crash),
                }
            }
            MicroOp::Branch { cond, target } => return self.branch(cond, target),
            MicroOp::Call { target } => {
                let t = self.operand(target);
                let sp = self.reg(Reg::SP).wrapping_sub(8);
                self.write_mem(sp, &next.to_le_bytes());
                self.touch(sp);
                self.set_reg(Reg::SP, sp, cycle + 1);
                return self.transfer(ev, t);
            }
            MicroOp::Ret => {
                let sp = self.reg(Reg::SP);
                let t = self.m.state.memory.read(sp, 8);
                self.touch(sp);
                self.set_reg(Reg::SP, sp.wrapping_add(8), cycle + 1);
                return self.transfer(ev, t);
            }
            MicroOp::SecurityCheck(check) => return Ok(self.check(ev, check)),
            MicroOp::Win => {
                match &mut self.window {
                    Some(w) => w.wins.push(ev),
                    None => self.m.state.hijacked = true,
                }
                self.pc = next;
            }
            MicroOp::Halt => match &mut self.window {
                Some(w) => w.stalled = true,
                None => return Ok(Flow::Halt),
            },
        }
        Ok(Flow::Continue)
    }

    fn branch(&mut self, cond: Reg, target: Va) -> Result<Flow, SimError> {
        let actual = self.reg(cond) != 0;
        let cond_ready = self.ready[cond.index()] <= self.m.state.cycle;
        let pc = self.pc;
        if cond_ready {
            if !self.speculative() {
                self.m.predictor.update(pc, actual);
            }
            self.pc = if actual { target } else { pc + INSTR_BYTES };
            return Ok(Flow::Continue);
        }
        if let Some(w) = &mut self.window {
            return match self.m.config.nested_branch {
                NestedBranchPolicy::Stall => {
                    // The branch re-issues after the window resolves.
                    w.record.issued_ops.pop();
                    self.events.pop();
                    w.stalled = true;
                    Ok(Flow::Continue)
                }
                NestedBranchPolicy::Error => Err(SimError::NestedWindowUnsupported(pc)),
            };
        }
        let predicted = self.m.predictor.predict(pc);
        let resolve_cycle = self.ready[cond.index()];
        self.open_window(pc, predicted, actual, target, resolve_cycle);
        Ok(Flow::Continue)
    }

    fn fetchable(&self, target: Va) -> bool {
        self.m.state.is_executable(target) && self.program.fetch(target).is_some()
    }

    /// Control transfer to `target` for a call or return.
    fn transfer(&mut self, ev: usize, target: Va) -> Result<Flow, SimError> {
        let ok = self.fetchable(target);
        let modulo = self.m.config.countermeasures.modulo_fetch_aslr;
        self.events[ev].addr = Some(target);
        self.events[ev].check = Some(CheckRecord {
            pass: ok,
            kind: ExceptionKind::UnmappedAccess,
            // A redirected fetch issues alongside the check.
            placement: if modulo {
                CheckPlacement::Parallel
            } else {
                CheckPlacement::SequentialGuard
            },
        });
        if ok {
            self.events[ev].cache_event = Some(self.touch(target));
            self.pc = target;
            return Ok(Flow::Continue);
        }
        let code = self.m.state.code_segment().map(|s| (s.start(), s.len));
        if let (true, Some((start, len))) = (modulo, code) {
            let redirected = start + (target % len) / INSTR_BYTES * INSTR_BYTES;
            self.events[ev].cache_event = Some(self.touch(redirected));
            let flow = self.raise(ev, ExceptionKind::UnmappedAccess, false, true);
            self.pc = redirected;
            return Ok(flow);
        }
        if self.speculative() {
            Ok(self.raise(ev, ExceptionKind::UnmappedAccess, true, false))
        } else {
            Err(SimError::UnmappedFetch(target))
        }
    }

    fn check(&mut self, ev: usize, check: CheckOp) -> Flow {
        let next = self.pc + INSTR_BYTES;
        let cycle = self.m.state.cycle;
        match check {
            CheckOp::Fail(kind) => {
                self.events[ev].check = Some(CheckRecord {
                    pass: false,
                    kind,
                    placement: CheckPlacement::SequentialGuard,
                });
                self.raise(ev, kind, true, false)
            }
            CheckOp::PacSign { dst, src, ctx } => {
                let signed = pa_sign(&self.m.pac, self.reg(src), self.operand(ctx));
                let ready = self.ready[src.index()]
                    .max(self.operand_ready(ctx))
                    .max(cycle)
                    + 1;
                self.set_reg(dst, signed.raw(), ready);
                self.pc = next;
                Flow::Continue
            }
            CheckOp::PacAuth { dst, src, ctx } => {
                let ptr = TaggedPointer(self.reg(src));
                let result = pa_auth(&self.m.pac, ptr, self.operand(ctx));
                let placement = self.placement(CheckPlacement::SequentialGuard);
                self.events[ev].check = Some(CheckRecord {
                    pass: result.is_ok(),
                    kind: ExceptionKind::AuthFailure,
                    placement,
                });
                let ready = self.ready[src.index()].max(cycle) + 1;
                match (result, placement) {
                    (Ok(va), _) => {
                        self.set_reg(dst, va, ready);
                        self.pc = next;
                        Flow::Continue
                    }
                    (Err(kind), CheckPlacement::Parallel) => {
                        self.set_reg(dst, ptr.strip(), ready);
                        let flow = self.raise(ev, kind, false, true);
                        self.pc = next;
                        flow
                    }
                    (Err(kind), _) => self.raise(ev, kind, true, false),
                }
            }
        }
    }

    /// Protection decode, MMU check, mitigation check, then the access.
    fn data_access(&mut self, ev: usize, ptr: u64, width: u8, store: Option<u64>) -> Access {
        let gv = self.m.protection.guard(ptr, width as u64);
        let mapped = self.m.state.is_mapped(gv.addr, width as u64);
        let mmu = (
            mapped,
            ExceptionKind::UnmappedAccess,
            self.placement(CheckPlacement::SequentialGuard),
        );
        let mitigation = gv.check.map(|(o, k, p)| (o.passed(), k, self.placement(p)));
        let failing = if !mapped {
            Some(mmu)
        } else {
            mitigation.filter(|c| !c.0)
        };
        let (pass, kind, placement) = failing.or(mitigation).unwrap_or(mmu);
        self.events[ev].addr = Some(gv.addr);
        self.events[ev].check = Some(CheckRecord {
            pass,
            kind,
            placement,
        });

        let substitute = matches!(failing, Some((_, _, CheckPlacement::ValueSubstitute)));
        if let Some((_, kind, CheckPlacement::SequentialGuard)) = failing {
            return match self.raise(ev, kind, true, false) {
                Flow::Crash => Access::Crashed,
                _ => Access::Stalled,
            };
        }
        let ce = self.touch(gv.addr);
        self.events[ev].cache_event = Some(ce);
        let value = match store {
            None if substitute => {
                self.events[ev].substituted = true;
                0
            }
            None => {
                let raw = self.m.state.memory.read_bytes(gv.addr, width as usize);
                let data = self.m.protection.transform_data(&raw, gv.data_domain);
                data.iter().rev().fold(0u64, |acc, &b| acc << 8 | b as u64)
            }
            Some(v) => {
                if failing.is_none() {
                    let bytes = &v.to_le_bytes()[..width as usize];
                    let data = self.m.protection.transform_data(bytes, gv.data_domain);
                    self.write_mem(gv.addr, &data);
                } else if substitute {
                    self.events[ev].substituted = true;
                }
                0
            }
        };
        if let Some((_, kind, placement)) = failing {
            let arch_deferred = placement == CheckPlacement::Parallel;
            if let Flow::Crash = self.raise(ev, kind, false, arch_deferred) {
                return Access::Crashed;
            }
        }
        Access::Value(value, ce.latency)
    }
}
