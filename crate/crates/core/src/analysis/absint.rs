//! Flat-lattice abstract interpretation over registers: constants, data
//! region addresses, and code addresses. Feeds taint-source detection and
//! call-site target provenance.

use std::collections::BTreeMap;

use crate::asm::{
    build_cfg, AsmFunction, AsmProgram, DataItem, Loc, MemOffset, Mnemonic, Operand, Reg,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbsVal {
    Const(u64),
    /// Base-plus-offset into a named data region.
    Region(String, u64),
    /// Address of a function.
    Code(String),
    Top,
}

impl AbsVal {
    fn join(&self, other: &AbsVal) -> AbsVal {
        if self == other {
            self.clone()
        } else {
            AbsVal::Top
        }
    }
}

type RegMap = BTreeMap<Reg, AbsVal>;

fn join_maps(a: &RegMap, b: &RegMap) -> RegMap {
    let mut out = RegMap::new();
    for (r, v) in a {
        if let Some(w) = b.get(r) {
            let j = v.join(w);
            if j != AbsVal::Top {
                out.insert(*r, j);
            }
        }
    }
    out
}

/// Initial quad content of a region at a byte offset, when statically known.
fn region_quad(p: &AsmProgram, region: &str, offset: u64) -> Option<AbsVal> {
    let d = p.region(region)?;
    let mut at = 0u64;
    for item in &d.items {
        if at == offset {
            return match item {
                DataItem::Quad(v) => Some(AbsVal::Const(*v)),
                DataItem::QuadSym(s) => {
                    if p.function(s).is_some() {
                        Some(AbsVal::Code(s.clone()))
                    } else {
                        Some(AbsVal::Region(s.clone(), 0))
                    }
                }
                DataItem::Byte(_) => None,
            };
        }
        at += item.size();
    }
    None
}

fn transfer(p: &AsmProgram, state: &mut RegMap, i: &crate::asm::Instr) {
    let set = |state: &mut RegMap, r: Reg, v: Option<AbsVal>| {
        match v {
            Some(v) if v != AbsVal::Top => state.insert(r, v),
            _ => state.remove(&r),
        };
    };
    let dst = match i.operands.first() {
        Some(Operand::Reg(r)) => Some(*r),
        _ => None,
    };
    match i.mnemonic {
        Mnemonic::Mov => {
            let v = match &i.operands[1] {
                Operand::Imm(v) => Some(AbsVal::Const(*v)),
                Operand::Reg(r) => state.get(r).cloned(),
                Operand::SymAddr(s) => {
                    if p.function(s).is_some() {
                        Some(AbsVal::Code(s.clone()))
                    } else {
                        Some(AbsVal::Region(s.clone(), 0))
                    }
                }
                _ => None,
            };
            if let Some(d) = dst {
                set(state, d, v);
            }
        }
        Mnemonic::Add | Mnemonic::Sub => {
            let base = match i.operands.get(1) {
                Some(Operand::Reg(r)) => state.get(r).cloned(),
                _ => None,
            };
            let v = match (base, i.operands.get(2)) {
                (Some(AbsVal::Const(c)), Some(Operand::Imm(k))) => Some(AbsVal::Const(
                    if i.mnemonic == Mnemonic::Add {
                        c.wrapping_add(*k)
                    } else {
                        c.wrapping_sub(*k)
                    },
                )),
                (Some(AbsVal::Region(n, off)), Some(Operand::Imm(k))) => {
                    let off = if i.mnemonic == Mnemonic::Add {
                        off.wrapping_add(*k)
                    } else {
                        off.wrapping_sub(*k)
                    };
                    Some(AbsVal::Region(n, off))
                }
                _ => None,
            };
            if let Some(d) = dst {
                set(state, d, v);
            }
        }
        Mnemonic::Ldr => {
            let v = match i.mem_operand() {
                Some(m) => {
                    let base = state.get(&m.base).cloned();
                    match (base, m.offset) {
                        (Some(AbsVal::Region(n, off)), MemOffset::Imm(k)) => {
                            region_quad(p, &n, off + k as u64)
                        }
                        _ => None,
                    }
                }
                None => None,
            };
            if let Some(d) = dst {
                set(state, d, v);
            }
        }
        Mnemonic::Bl | Mnemonic::Blr => {
            for n in 0..=17 {
                state.remove(&Reg::X(n));
            }
            state.remove(&Reg::X(30));
        }
        _ => {
            for d in i.defs() {
                state.remove(&d);
            }
        }
    }
}

/// Abstract register values before each original instruction.
pub fn abstract_values(p: &AsmProgram, f: &AsmFunction) -> BTreeMap<Loc, RegMap> {
    let cfg = build_cfg(f);
    let mut entry_states: BTreeMap<String, RegMap> = BTreeMap::new();
    entry_states.insert(f.entry.clone(), RegMap::new());
    let mut out = BTreeMap::new();

    // Fixpoint over block entry states.
    for _ in 0..(f.blocks.len() + 2) {
        let mut changed = false;
        for b in &f.blocks {
            let mut state = match entry_states.get(&b.label) {
                Some(s) => s.clone(),
                None => continue,
            };
            for (idx, i) in b.instrs.iter().filter(|i| i.meta.is_none()).enumerate() {
                out.insert(Loc::new(f.name.clone(), b.label.clone(), idx), state.clone());
                transfer(p, &mut state, i);
            }
            for edge in cfg.successors(&b.label) {
                if let Some(t) = &edge.target {
                    let next = match entry_states.get(t) {
                        Some(existing) => join_maps(existing, &state),
                        None => state.clone(),
                    };
                    if entry_states.get(t) != Some(&next) {
                        entry_states.insert(t.clone(), next);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    out
}
