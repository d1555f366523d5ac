//! Forward taint propagation: intra-procedural to a fixed point, plus one
//! call level through callee summaries.
//!
//! Sources are loads from designated external-input regions and the
//! argument registers at entry of exported functions. Memory taint is
//! tracked per resolvable cell: stack slots addressed as `[sp, #imm]` /
//! `[x29, #imm]` and named-region cells.

use std::collections::{BTreeMap, BTreeSet};

use crate::asm::{
    build_cfg, AsmFunction, AsmProgram, Instr, Loc, MemOffset, Mnemonic, Operand, Reg,
};

use super::absint::{abstract_values, AbsVal};

/// An abstract memory cell whose taint is tracked.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Cell {
    /// Frame slot: `[sp, #imm]` or `[x29, #imm]`.
    Frame(Reg, u32),
    /// Named-region cell at a constant offset.
    Region(String, u64),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct State {
    regs: BTreeSet<Reg>,
    cells: BTreeSet<Cell>,
}

impl State {
    fn join(&mut self, other: &State) -> bool {
        let before = (self.regs.len(), self.cells.len());
        self.regs.extend(other.regs.iter().copied());
        self.cells.extend(other.cells.iter().cloned());
        before != (self.regs.len(), self.cells.len())
    }
}

/// Per-function taint facts at each original instruction.
#[derive(Debug, Clone, Default)]
pub struct TaintSummary {
    /// Registers tainted immediately before each loc.
    pub tainted_before: BTreeMap<Loc, BTreeSet<Reg>>,
    /// Whether the function's return value (x0) is tainted, per function,
    /// considering only the function's own sources (summary depth one).
    pub returns_tainted: BTreeMap<String, bool>,
    /// Argument registers that flow to the return value, per function.
    pub arg_to_return: BTreeMap<String, BTreeSet<Reg>>,
}

impl TaintSummary {
    pub fn is_tainted(&self, loc: &Loc, reg: Reg) -> bool {
        self.tainted_before
            .get(loc)
            .map(|s| s.contains(&reg))
            .unwrap_or(false)
    }
}

fn cell_of(
    abs: &BTreeMap<Loc, BTreeMap<Reg, AbsVal>>,
    loc: &Loc,
    i: &Instr,
) -> Option<Cell> {
    let m = i.mem_operand()?;
    if matches!(m.base, Reg::Sp) || m.base == Reg::X(29) {
        if let MemOffset::Imm(off) = m.offset {
            return Some(Cell::Frame(m.base, off));
        }
    }
    let vals = abs.get(loc)?;
    match (vals.get(&m.base), m.offset) {
        (Some(AbsVal::Region(name, base_off)), MemOffset::Imm(off)) => {
            Some(Cell::Region(name.clone(), base_off + off as u64))
        }
        _ => None,
    }
}

/// Is this load's address inside a designated input region?
fn loads_input_region(
    abs: &BTreeMap<Loc, BTreeMap<Reg, AbsVal>>,
    loc: &Loc,
    i: &Instr,
    inputs: &[String],
) -> bool {
    let Some(m) = i.mem_operand() else {
        return false;
    };
    let Some(vals) = abs.get(loc) else {
        return false;
    };
    match vals.get(&m.base) {
        Some(AbsVal::Region(name, _)) => inputs.iter().any(|r| r == name),
        _ => false,
    }
}

struct FnSummary {
    returns_tainted: bool,
    arg_to_return: BTreeSet<Reg>,
}

/// One intra-procedural pass over `f`. `summaries` is consulted at `bl`
/// sites when present (giving exactly one level of call propagation) and
/// empty while computing the summaries themselves.
fn analyze_function(
    p: &AsmProgram,
    f: &AsmFunction,
    inputs: &[String],
    summaries: &BTreeMap<String, FnSummary>,
    taint_entry_args: bool,
    out: Option<&mut BTreeMap<Loc, BTreeSet<Reg>>>,
) -> FnSummary {
    let abs = abstract_values(p, f);
    let cfg = build_cfg(f);
    let mut entry = State::default();
    if taint_entry_args && f.exported {
        for n in 0..=7 {
            entry.regs.insert(Reg::X(n));
        }
    }
    // Track which entry argument registers flow to the return, by seeding
    // them all and watching x0 at returns against per-arg propagation.
    let mut entry_states: BTreeMap<String, State> = BTreeMap::new();
    entry_states.insert(f.entry.clone(), entry);

    let mut facts: BTreeMap<Loc, BTreeSet<Reg>> = BTreeMap::new();
    let mut returns_tainted = false;

    for _ in 0..(f.blocks.len() * 2 + 2) {
        let mut changed = false;
        for b in &f.blocks {
            let mut state = match entry_states.get(&b.label) {
                Some(s) => s.clone(),
                None => continue,
            };
            for (idx, i) in b.instrs.iter().filter(|i| i.meta.is_none()).enumerate() {
                let loc = Loc::new(f.name.clone(), b.label.clone(), idx);
                let entry_facts = facts.entry(loc.clone()).or_default();
                let before = entry_facts.len();
                entry_facts.extend(state.regs.iter().copied());
                if entry_facts.len() != before {
                    changed = true;
                }
                transfer_taint(p, f, &abs, &loc, i, inputs, summaries, &mut state);
                if i.mnemonic == Mnemonic::Ret && state.regs.contains(&Reg::X(0)) {
                    returns_tainted = true;
                }
            }
            for e in cfg.successors(&b.label) {
                if let Some(t) = &e.target {
                    let next = entry_states.entry(t.clone()).or_default();
                    if next.join(&state) {
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    // Which argument registers reach the return value: rerun with a single
    // seeded argument at a time. Functions are small; this stays cheap.
    let mut arg_to_return = BTreeSet::new();
    for arg in 0..=7u8 {
        let mut entry_states: BTreeMap<String, State> = BTreeMap::new();
        let mut st = State::default();
        st.regs.insert(Reg::X(arg));
        entry_states.insert(f.entry.clone(), st);
        let mut reaches = false;
        for _ in 0..(f.blocks.len() * 2 + 2) {
            let mut changed = false;
            for b in &f.blocks {
                let mut state = match entry_states.get(&b.label) {
                    Some(s) => s.clone(),
                    None => continue,
                };
                for (idx, i) in b.instrs.iter().filter(|i| i.meta.is_none()).enumerate() {
                    let loc = Loc::new(f.name.clone(), b.label.clone(), idx);
                    transfer_taint(p, f, &abs, &loc, i, &[], &BTreeMap::new(), &mut state);
                    if i.mnemonic == Mnemonic::Ret && state.regs.contains(&Reg::X(0)) {
                        reaches = true;
                    }
                }
                for e in cfg.successors(&b.label) {
                    if let Some(t) = &e.target {
                        let next = entry_states.entry(t.clone()).or_default();
                        if next.join(&state) {
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if reaches {
            arg_to_return.insert(Reg::X(arg));
        }
    }

    if let Some(out) = out {
        *out = facts;
    }
    FnSummary {
        returns_tainted,
        arg_to_return,
    }
}

#[allow(clippy::too_many_arguments)]
fn transfer_taint(
    p: &AsmProgram,
    f: &AsmFunction,
    abs: &BTreeMap<Loc, BTreeMap<Reg, AbsVal>>,
    loc: &Loc,
    i: &Instr,
    inputs: &[String],
    summaries: &BTreeMap<String, FnSummary>,
    state: &mut State,
) {
    let _ = f;
    match i.mnemonic {
        Mnemonic::Ldr | Mnemonic::Ldrb => {
            let mut tainted = loads_input_region(abs, loc, i, inputs);
            if let Some(cell) = cell_of(abs, loc, i) {
                if state.cells.contains(&cell) {
                    tainted = true;
                }
            }
            if let Some(m) = i.mem_operand() {
                if state.regs.contains(&m.base) {
                    tainted = true;
                }
                if let MemOffset::Reg(r) = m.offset {
                    if state.regs.contains(&r) {
                        tainted = true;
                    }
                }
            }
            if let Some(Operand::Reg(d)) = i.operands.first() {
                if tainted {
                    state.regs.insert(*d);
                } else {
                    state.regs.remove(d);
                }
            }
        }
        Mnemonic::Str | Mnemonic::Strb => {
            if let Some(cell) = cell_of(abs, loc, i) {
                let src_tainted = match i.operands.first() {
                    Some(Operand::Reg(r)) => state.regs.contains(r),
                    _ => false,
                };
                if src_tainted {
                    state.cells.insert(cell);
                } else {
                    state.cells.remove(&cell);
                }
            }
        }
        Mnemonic::Bl => {
            let callee = i.branch_target().unwrap_or("");
            let summary = summaries.get(callee);
            let mut ret_tainted = false;
            if let Some(s) = summary {
                if s.returns_tainted {
                    ret_tainted = true;
                }
                for arg in &s.arg_to_return {
                    if state.regs.contains(arg) {
                        ret_tainted = true;
                    }
                }
            }
            let _ = p;
            // Caller-saved registers are clobbered by the call.
            for n in 0..=17 {
                state.regs.remove(&Reg::X(n));
            }
            state.regs.remove(&Reg::X(30));
            if ret_tainted {
                state.regs.insert(Reg::X(0));
            }
        }
        Mnemonic::Blr => {
            for n in 0..=17 {
                state.regs.remove(&Reg::X(n));
            }
            state.regs.remove(&Reg::X(30));
        }
        _ => {
            let defs = i.defs();
            if defs.is_empty() {
                return;
            }
            let any_use_tainted = i.uses().iter().any(|u| state.regs.contains(u));
            for d in defs {
                if any_use_tainted {
                    state.regs.insert(d);
                } else {
                    state.regs.remove(&d);
                }
            }
        }
    }
}

/// Deterministic fixed-point taint over the whole program.
pub fn compute_taint(p: &AsmProgram, input_regions: &[String]) -> TaintSummary {
    // Pass one: intra-procedural summaries (no call propagation inside).
    let mut summaries: BTreeMap<String, FnSummary> = BTreeMap::new();
    for f in &p.functions {
        let s = analyze_function(p, f, input_regions, &BTreeMap::new(), false, None);
        summaries.insert(f.name.clone(), s);
    }
    // Pass two: full per-function facts with one level of call summaries.
    let mut out = TaintSummary::default();
    for f in &p.functions {
        let mut facts = BTreeMap::new();
        let s = analyze_function(p, f, input_regions, &summaries, true, Some(&mut facts));
        out.tainted_before.extend(facts);
        out.returns_tainted.insert(f.name.clone(), s.returns_tainted);
        out.arg_to_return.insert(f.name.clone(), s.arg_to_return);
    }
    out
}
