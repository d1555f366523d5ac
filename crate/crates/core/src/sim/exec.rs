//! Architectural and speculative execution.
//!
//! Two microarchitectural properties drive the speculative semantics:
//! a PA authentication failure during speculation squashes the episode at
//! that instruction (no later instruction contributes trace entries), and
//! a speculative indirect branch to a non-BTI target squashes before the
//! first target instruction executes. Architecturally the same conditions
//! fault (FEAT_FPAC-style) or raise a BTI violation.

use thiserror::Error;

use crate::asm::{AsmProgram, Cond, Loc, MemOffset, Mnemonic, Operand, Reg, LR};

use super::machine::{
    FlatInstr, Image, MachineState, Mode, SimConfig, RETURN_SENTINEL,
};
use super::pac::{auth, sign, PacDomain};
use super::trace::{CacheTrace, Phase, SquashCause};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Fault {
    #[error("PAC authentication failure at {loc}")]
    PacAuthFailure { loc: Loc },
    #[error("BTI violation: branch at {loc} targets non-BTI instruction")]
    BtiViolation { loc: Loc },
    #[error("bad address {addr:#x} at {loc}")]
    BadAddress { loc: Loc, addr: u64 },
}

impl Fault {
    pub fn loc(&self) -> &Loc {
        match self {
            Fault::PacAuthFailure { loc }
            | Fault::BtiViolation { loc }
            | Fault::BadAddress { loc, .. } => loc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("entry function '{0}' not found")]
    UnknownEntry(String),
    #[error("step budget exceeded after {0} instructions")]
    StepBudgetExceeded(u64),
    #[error("mistrain directive does not match any executed site: {0}")]
    InvalidMistrain(String),
}

/// What ended an architectural run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    /// Returned from the entry function.
    Returned,
    Fault(Fault),
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub state: MachineState,
    pub trace: CacheTrace,
    pub outcome: Outcome,
    /// Executed block transitions `(func, from, to)`, for CFG co-simulation.
    pub transitions: Vec<(String, String, String)>,
}

/// A forced misprediction directive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mistrain {
    Branch { loc: Loc, taken: bool },
    Indirect { loc: Loc, target: String },
    Return { loc: Loc, target: String },
}

impl Mistrain {
    pub fn loc(&self) -> &Loc {
        match self {
            Mistrain::Branch { loc, .. }
            | Mistrain::Indirect { loc, .. }
            | Mistrain::Return { loc, .. } => loc,
        }
    }
}

/// Outcome of one instruction step.
enum Step {
    Continue,
    Jump(u64),
    ReturnTo(u64),
    PacFail,
    BtiFail { target_loc: Loc },
    MemFault(u64),
}

pub struct Machine<'a> {
    pub image: &'a Image,
    pub config: &'a SimConfig,
    guarded: bool,
}

impl<'a> Machine<'a> {
    pub fn new(image: &'a Image, config: &'a SimConfig) -> Machine<'a> {
        Machine {
            image,
            config,
            guarded: config.bti_enforced.unwrap_or(image.guarded),
        }
    }

    pub fn initial_state(&self, entry: &str, inits: &[(Reg, u64)]) -> Result<MachineState, SimError> {
        let addr = self
            .image
            .func_addrs
            .get(entry)
            .copied()
            .ok_or_else(|| SimError::UnknownEntry(entry.to_string()))?;
        let mut st = MachineState::new(self.image, self.config.pa_key);
        st.pc = addr;
        st.write_reg(LR, RETURN_SENTINEL);
        for (r, v) in inits {
            st.write_reg(*r, *v);
        }
        Ok(st)
    }

    fn fetch(&self, pc: u64) -> Option<&FlatInstr> {
        self.image.instr_at_addr(pc)
    }

    /// BTI landing-pad check for an indirect branch to `target`.
    fn bti_ok(&self, target: u64, is_call: bool) -> Result<(), Option<Loc>> {
        if !self.guarded {
            return Ok(());
        }
        match self.fetch(target) {
            Some(fi) => {
                let ok = match &fi.instr.mnemonic {
                    Mnemonic::Bti => match fi.instr.operands.first() {
                        Some(Operand::Bti(m)) => {
                            if is_call {
                                m.accepts_call()
                            } else {
                                m.accepts_jump()
                            }
                        }
                        _ => false,
                    },
                    _ => false,
                };
                if ok {
                    Ok(())
                } else {
                    Err(Some(fi.loc.clone()))
                }
            }
            None => Err(None),
        }
    }

    /// Execute the instruction at `st.pc`, appending accesses to `trace`.
    /// Does not advance the PC; the caller interprets the `Step`.
    fn exec_instr(
        &self,
        st: &mut MachineState,
        fi: &FlatInstr,
        trace: &mut CacheTrace,
        phase: Phase,
    ) -> Step {
        let i = &fi.instr;
        let reg = |st: &MachineState, k: usize| match i.operands.get(k) {
            Some(Operand::Reg(r)) => st.read_reg(*r),
            _ => 0,
        };
        let dst = || match i.operands.first() {
            Some(Operand::Reg(r)) => *r,
            _ => Reg::Xzr,
        };
        let imm = |k: usize| match i.operands.get(k) {
            Some(Operand::Imm(v)) => Some(*v),
            _ => None,
        };

        match i.mnemonic {
            Mnemonic::Nop | Mnemonic::Bti => Step::Continue,
            Mnemonic::Mov => {
                let v = match &i.operands[1] {
                    Operand::Imm(v) => *v,
                    Operand::Reg(r) => st.read_reg(*r),
                    Operand::SymAddr(s) => self
                        .image
                        .data_addr(s)
                        .or_else(|| self.image.code_addr(s))
                        .unwrap_or(0),
                    _ => 0,
                };
                st.write_reg(dst(), v);
                Step::Continue
            }
            Mnemonic::Movk => {
                let shift = i
                    .operands
                    .iter()
                    .find_map(|o| match o {
                        Operand::Shift(s) => Some(*s as u32),
                        _ => None,
                    })
                    .unwrap_or(0);
                let keep = !(0xffffu64 << shift);
                let v = (st.read_reg(dst()) & keep) | (imm(1).unwrap_or(0) << shift);
                st.write_reg(dst(), v);
                Step::Continue
            }
            Mnemonic::Add | Mnemonic::Sub | Mnemonic::And | Mnemonic::Orr | Mnemonic::Eor => {
                let a = reg(st, 1);
                let b = imm(2).unwrap_or_else(|| reg(st, 2));
                let v = match i.mnemonic {
                    Mnemonic::Add => a.wrapping_add(b),
                    Mnemonic::Sub => a.wrapping_sub(b),
                    Mnemonic::And => a & b,
                    Mnemonic::Orr => a | b,
                    _ => a ^ b,
                };
                st.write_reg(dst(), v);
                Step::Continue
            }
            Mnemonic::Lsl | Mnemonic::Lsr => {
                let a = reg(st, 1);
                let s = (imm(2).unwrap_or_else(|| reg(st, 2)) & 63) as u32;
                let v = if i.mnemonic == Mnemonic::Lsl {
                    a.wrapping_shl(s)
                } else {
                    a.wrapping_shr(s)
                };
                st.write_reg(dst(), v);
                Step::Continue
            }
            Mnemonic::Cmp => {
                let a = reg(st, 0);
                let b = imm(1).unwrap_or_else(|| reg(st, 1));
                st.set_flags_sub(a, b);
                Step::Continue
            }
            Mnemonic::Csel => {
                let c = i.cond().unwrap_or(Cond::Eq);
                let v = if st.cond_holds(c) {
                    reg(st, 1)
                } else {
                    reg(st, 2)
                };
                st.write_reg(dst(), v);
                Step::Continue
            }
            Mnemonic::Ldr | Mnemonic::Ldrb => {
                let (addr, len) = match self.mem_addr(st, i) {
                    Some(a) => a,
                    None => return Step::MemFault(0),
                };
                match st.read_mem(self.image, addr, len) {
                    Some(v) => {
                        trace.push_access(addr, phase);
                        st.write_reg(dst(), v);
                        Step::Continue
                    }
                    None => Step::MemFault(addr),
                }
            }
            Mnemonic::Str | Mnemonic::Strb => {
                let (addr, len) = match self.mem_addr(st, i) {
                    Some(a) => a,
                    None => return Step::MemFault(0),
                };
                let v = reg(st, 0);
                if st.write_mem(self.image, addr, len, v) {
                    trace.push_access(addr, phase);
                    Step::Continue
                } else {
                    Step::MemFault(addr)
                }
            }
            Mnemonic::B => {
                let target = i.branch_target().and_then(|l| {
                    self.image
                        .block_addrs
                        .get(&format!("{}:{}", fi.loc.func, l))
                        .copied()
                });
                match target {
                    Some(t) => Step::Jump(t),
                    None => Step::MemFault(0),
                }
            }
            Mnemonic::BCond => {
                let c = i.cond().unwrap_or(Cond::Eq);
                if st.cond_holds(c) {
                    let target = i.branch_target().and_then(|l| {
                        self.image
                            .block_addrs
                            .get(&format!("{}:{}", fi.loc.func, l))
                            .copied()
                    });
                    match target {
                        Some(t) => Step::Jump(t),
                        None => Step::MemFault(0),
                    }
                } else {
                    Step::Continue
                }
            }
            Mnemonic::Bl => {
                let target = i
                    .branch_target()
                    .and_then(|l| self.image.func_addrs.get(l).copied());
                match target {
                    Some(t) => {
                        st.write_reg(LR, fi.addr + 4);
                        Step::Jump(t)
                    }
                    // Calls to external symbols return immediately.
                    None => Step::Continue,
                }
            }
            Mnemonic::Blr => {
                let t = reg(st, 0);
                st.write_reg(LR, fi.addr + 4);
                match self.bti_ok(t, true) {
                    Ok(()) => Step::Jump(t),
                    Err(target_loc) => Step::BtiFail {
                        target_loc: target_loc.unwrap_or_else(|| fi.loc.clone()),
                    },
                }
            }
            Mnemonic::Br => {
                let t = reg(st, 0);
                match self.bti_ok(t, false) {
                    Ok(()) => Step::Jump(t),
                    Err(target_loc) => Step::BtiFail {
                        target_loc: target_loc.unwrap_or_else(|| fi.loc.clone()),
                    },
                }
            }
            Mnemonic::Ret => Step::ReturnTo(st.read_reg(LR)),
            Mnemonic::Pacia | Mnemonic::Pacda => {
                let dom = if i.mnemonic == Mnemonic::Pacia {
                    PacDomain::Instruction
                } else {
                    PacDomain::Data
                };
                let v = sign(reg(st, 0), reg(st, 1), st.pa_key, dom);
                st.write_reg(dst(), v.raw);
                Step::Continue
            }
            Mnemonic::Autia | Mnemonic::Autda => {
                let dom = if i.mnemonic == Mnemonic::Autia {
                    PacDomain::Instruction
                } else {
                    PacDomain::Data
                };
                match auth(reg(st, 0), reg(st, 1), st.pa_key, dom) {
                    Ok(v) => {
                        st.write_reg(dst(), v);
                        Step::Continue
                    }
                    Err(_) => Step::PacFail,
                }
            }
            Mnemonic::Paciasp => {
                let v = sign(st.read_reg(LR), st.sp, st.pa_key, PacDomain::Instruction);
                st.write_reg(LR, v.raw);
                Step::Continue
            }
            Mnemonic::Autiasp => match auth(st.read_reg(LR), st.sp, st.pa_key, PacDomain::Instruction) {
                Ok(v) => {
                    st.write_reg(LR, v);
                    Step::Continue
                }
                Err(_) => Step::PacFail,
            },
        }
    }

    fn mem_addr(&self, st: &MachineState, i: &crate::asm::Instr) -> Option<(u64, u64)> {
        let m = i.mem_operand()?;
        let base = st.read_reg(m.base);
        let off = match m.offset {
            MemOffset::Imm(v) => v as u64,
            MemOffset::Reg(r) => st.read_reg(r),
        };
        let len = match i.mnemonic {
            Mnemonic::Ldrb | Mnemonic::Strb => 1,
            _ => 8,
        };
        Some((base.wrapping_add(off), len))
    }

    /// Architectural run from `entry` to return, fault, or budget.
    pub fn run_architectural(
        &self,
        entry: &str,
        inits: &[(Reg, u64)],
    ) -> Result<RunResult, SimError> {
        let mut st = self.initial_state(entry, inits)?;
        let mut trace = CacheTrace::default();
        let mut transitions = Vec::new();
        let outcome = self.run_arch_from(&mut st, &mut trace, &mut transitions, None, &[])?;
        Ok(RunResult {
            state: st,
            trace,
            outcome,
            transitions,
        })
    }

    /// Run architecturally; when `mistrain` is present, fork a speculative
    /// episode at the first matching site, then continue architecturally.
    pub fn run_speculative_episode(
        &self,
        entry: &str,
        inits: &[(Reg, u64)],
        mistrain: Option<&Mistrain>,
    ) -> Result<RunResult, SimError> {
        let st = self.initial_state(entry, inits)?;
        self.run_prepared(st, mistrain, &[])
    }

    /// Run an already-prepared state (e.g. after attacker writes).
    /// `triggered_writes` fire architecturally the first time execution
    /// reaches their location, modeling a concurrent attacker write.
    pub fn run_prepared(
        &self,
        mut st: MachineState,
        mistrain: Option<&Mistrain>,
        triggered_writes: &[(Loc, u64, u8)],
    ) -> Result<RunResult, SimError> {
        if let Some(m) = mistrain {
            let known = self.image.instrs.iter().any(|fi| self.matches_site(fi, m));
            if !known {
                return Err(SimError::InvalidMistrain(m.loc().to_string()));
            }
        }
        let mut trace = CacheTrace::default();
        let mut transitions = Vec::new();
        let outcome = self.run_arch_from(
            &mut st,
            &mut trace,
            &mut transitions,
            mistrain,
            triggered_writes,
        )?;
        Ok(RunResult {
            state: st,
            trace,
            outcome,
            transitions,
        })
    }

    fn run_arch_from(
        &self,
        st: &mut MachineState,
        trace: &mut CacheTrace,
        transitions: &mut Vec<(String, String, String)>,
        mistrain: Option<&Mistrain>,
        triggered_writes: &[(Loc, u64, u8)],
    ) -> Result<Outcome, SimError> {
        let mut steps = 0u64;
        let mut fired = false;
        let mut writes_fired = vec![false; triggered_writes.len()];
        let mut prev_block: Option<(String, String)> = None;
        loop {
            if steps >= self.config.max_steps {
                return Err(SimError::StepBudgetExceeded(steps));
            }
            steps += 1;
            let fi = match self.fetch(st.pc) {
                Some(fi) => fi.clone(),
                None => {
                    return Ok(Outcome::Fault(Fault::BadAddress {
                        loc: Loc::new("?", "?", 0),
                        addr: st.pc,
                    }))
                }
            };
            if let Some((func, block)) = &prev_block {
                if *func == fi.loc.func && *block != fi.loc.block {
                    transitions.push((func.clone(), block.clone(), fi.loc.block.clone()));
                }
            }
            prev_block = Some((fi.loc.func.clone(), fi.loc.block.clone()));

            // Attacker writes fire the first time their location is reached,
            // before the instruction there executes.
            for (k, (loc, addr, byte)) in triggered_writes.iter().enumerate() {
                if !writes_fired[k] && fi.instr.meta.is_none() && fi.loc == *loc {
                    writes_fired[k] = true;
                    st.mem.insert(*addr, *byte);
                }
            }

            // Fire the mistrain directive at its first dynamic occurrence.
            if !fired {
                if let Some(m) = mistrain {
                    if self.matches_site(&fi, m) {
                        fired = true;
                        self.speculate(st, &fi, m, trace);
                        // Fall through: the instruction now executes with its
                        // architectural semantics on the real state.
                    }
                }
            }

            match self.exec_instr(st, &fi, trace, Phase::Architectural) {
                Step::Continue => st.pc = fi.addr + 4,
                Step::Jump(t) => st.pc = t,
                Step::ReturnTo(t) => {
                    if t == RETURN_SENTINEL {
                        return Ok(Outcome::Returned);
                    }
                    st.pc = t;
                }
                Step::PacFail => {
                    return Ok(Outcome::Fault(Fault::PacAuthFailure {
                        loc: fi.loc.clone(),
                    }))
                }
                Step::BtiFail { .. } => {
                    return Ok(Outcome::Fault(Fault::BtiViolation {
                        loc: fi.loc.clone(),
                    }))
                }
                Step::MemFault(addr) => {
                    return Ok(Outcome::Fault(Fault::BadAddress {
                        loc: fi.loc.clone(),
                        addr,
                    }))
                }
            }
        }
    }

    fn matches_site(&self, fi: &FlatInstr, m: &Mistrain) -> bool {
        let (loc, want) = match m {
            Mistrain::Branch { loc, .. } => (loc, Mnemonic::BCond),
            Mistrain::Indirect { loc, .. } => (
                loc,
                if fi.instr.mnemonic == Mnemonic::Br {
                    Mnemonic::Br
                } else {
                    Mnemonic::Blr
                },
            ),
            Mistrain::Return { loc, .. } => (loc, Mnemonic::Ret),
        };
        fi.instr.mnemonic == want && fi.loc == *loc
    }

    /// Fork a transient episode down the forced wrong path.
    fn speculate(&self, st: &MachineState, fi: &FlatInstr, m: &Mistrain, trace: &mut CacheTrace) {
        let window = self.config.window;
        let mut spec = st.clone();
        spec.mode = Mode::Speculative {
            depth: 1,
            budget: window,
        };
        if window == 0 {
            trace.push_squash(fi.loc.clone(), SquashCause::Budget);
            return;
        }

        // Compute the forced transient PC.
        let start = match m {
            Mistrain::Branch { taken, .. } => {
                let c = fi.instr.cond().unwrap_or(Cond::Eq);
                let actual = spec.cond_holds(c);
                if actual == *taken {
                    // Prediction agrees with the architectural outcome:
                    // nothing transient happens, the episode resolves.
                    trace.push_squash(fi.loc.clone(), SquashCause::Resolve);
                    return;
                }
                if *taken {
                    match fi.instr.branch_target().and_then(|l| {
                        self.image
                            .block_addrs
                            .get(&format!("{}:{}", fi.loc.func, l))
                            .copied()
                    }) {
                        Some(t) => t,
                        None => return,
                    }
                } else {
                    fi.addr + 4
                }
            }
            Mistrain::Indirect { target, .. } => {
                if fi.instr.mnemonic == Mnemonic::Blr {
                    spec.write_reg(LR, fi.addr + 4);
                }
                let t = match self.resolve_code_label(&fi.loc.func, target) {
                    Some(t) => t,
                    None => return,
                };
                // The forced target is still an indirect-branch target: BTI applies.
                if let Err(target_loc) = self.bti_ok(t, fi.instr.mnemonic == Mnemonic::Blr) {
                    trace.push_squash(
                        target_loc.unwrap_or_else(|| fi.loc.clone()),
                        SquashCause::BtiMismatch,
                    );
                    return;
                }
                t
            }
            Mistrain::Return { target, .. } => {
                // Return predictions are not BTI-checked.
                match self.resolve_code_label(&fi.loc.func, target) {
                    Some(t) => t,
                    None => return,
                }
            }
        };

        spec.pc = start;
        let mut budget = window;
        loop {
            if budget == 0 {
                let loc = self
                    .fetch(spec.pc)
                    .map(|f| f.loc.clone())
                    .unwrap_or_else(|| fi.loc.clone());
                trace.push_squash(loc, SquashCause::Budget);
                return;
            }
            let cur = match self.fetch(spec.pc) {
                Some(f) => f.clone(),
                None => {
                    // Ran off the code image (e.g. returned out of the
                    // episode); the misprediction resolves.
                    trace.push_squash(fi.loc.clone(), SquashCause::Resolve);
                    return;
                }
            };
            budget -= 1;
            match self.exec_instr(&mut spec, &cur, trace, Phase::Transient) {
                Step::Continue => spec.pc = cur.addr + 4,
                Step::Jump(t) => spec.pc = t,
                Step::ReturnTo(t) => {
                    if t == RETURN_SENTINEL {
                        trace.push_squash(cur.loc.clone(), SquashCause::Resolve);
                        return;
                    }
                    spec.pc = t;
                }
                Step::PacFail => {
                    // The squashing property: nothing after this instruction
                    // executes, and the failing auth contributes no access.
                    trace.push_squash(cur.loc.clone(), SquashCause::PacMismatch);
                    return;
                }
                Step::BtiFail { target_loc } => {
                    trace.push_squash(target_loc, SquashCause::BtiMismatch);
                    return;
                }
                Step::MemFault(_) => {
                    // Transient faults are suppressed; the episode resolves.
                    trace.push_squash(cur.loc.clone(), SquashCause::Resolve);
                    return;
                }
            }
        }
    }

    fn resolve_code_label(&self, current_func: &str, label: &str) -> Option<u64> {
        if label.contains(':') {
            return self.image.block_addrs.get(label).copied();
        }
        self.image
            .func_addrs
            .get(label)
            .copied()
            .or_else(|| {
                self.image
                    .block_addrs
                    .get(&format!("{current_func}:{label}"))
                    .copied()
            })
    }
}

/// Convenience wrapper: load and run architecturally.
pub fn run_architectural(
    p: &AsmProgram,
    entry: &str,
    inits: &[(Reg, u64)],
    config: &SimConfig,
) -> Result<RunResult, SimError> {
    let image = Image::load(p);
    Machine::new(&image, config).run_architectural(entry, inits)
}

/// Convenience wrapper: load and run one mistrained episode.
pub fn run_speculative_episode(
    p: &AsmProgram,
    entry: &str,
    inits: &[(Reg, u64)],
    mistrain: Option<&Mistrain>,
    config: &SimConfig,
) -> Result<RunResult, SimError> {
    let image = Image::load(p);
    Machine::new(&image, config).run_speculative_episode(entry, inits, mistrain)
}
