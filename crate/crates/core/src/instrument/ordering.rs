//! Mechanism D: authentication ordering.
//!
//! Within each block, an inserted `aut*` must precede every instruction
//! that consumes or exposes the value it verifies: dereferences through
//! it, arithmetic or comparisons on it, stores of it, and indirect
//! branches through it all count. Violations are repaired by moving the
//! inserted verification earlier; original instructions never move, and a
//! repair that would hoist the verification above its own modifier
//! computation is unsatisfiable.

use crate::asm::{AsmFunction, Instr, Loc, MemOffset, Mnemonic, Operand, Reg};

use super::InstrumentError;

/// Does `i` consume or expose `v` in a way that must happen after
/// verification? Stores of the signed value itself are the one tolerated
/// pre-verification use (integrity rides through memory).
fn exposes(i: &Instr, v: Reg) -> bool {
    match i.mnemonic {
        Mnemonic::Ldr | Mnemonic::Ldrb => {
            if let Some(m) = i.mem_operand() {
                m.base == v || matches!(m.offset, MemOffset::Reg(r) if r == v)
            } else {
                false
            }
        }
        Mnemonic::Str | Mnemonic::Strb => {
            if let Some(m) = i.mem_operand() {
                m.base == v || matches!(m.offset, MemOffset::Reg(r) if r == v)
            } else {
                false
            }
        }
        Mnemonic::Br | Mnemonic::Blr => {
            matches!(i.operands.first(), Some(Operand::Reg(r)) if *r == v)
        }
        Mnemonic::Cmp
        | Mnemonic::Add
        | Mnemonic::Sub
        | Mnemonic::And
        | Mnemonic::Orr
        | Mnemonic::Eor
        | Mnemonic::Lsl
        | Mnemonic::Lsr
        | Mnemonic::Csel
        | Mnemonic::Mov => i.uses().contains(&v),
        _ => false,
    }
}

/// Verify and repair the ordering within every block of `f`.
pub fn enforce_ordering(f: &AsmFunction) -> Result<AsmFunction, InstrumentError> {
    let mut out = f.clone();
    for b in &mut out.blocks {
        loop {
            let mut violation: Option<(usize, usize)> = None;
            'scan: for (pos, i) in b.instrs.iter().enumerate() {
                if i.meta.is_none() || !i.mnemonic.is_pac_auth() {
                    continue;
                }
                let Some(Operand::Reg(v)) = i.operands.first() else {
                    continue;
                };
                // The window starts after the last write to v before the aut.
                let window_start = b.instrs[..pos]
                    .iter()
                    .rposition(|w| w.defs().contains(v))
                    .map(|k| k + 1)
                    .unwrap_or(0);
                for (k, w) in b.instrs.iter().enumerate().take(pos).skip(window_start) {
                    if exposes(w, *v) {
                        violation = Some((pos, k));
                        break 'scan;
                    }
                }
            }
            let Some((aut_pos, expose_pos)) = violation else {
                break;
            };
            let aut = b.instrs[aut_pos].clone();
            // Repair legality: the modifier register must not be produced
            // between the new and old positions.
            if let Some(Operand::Reg(m)) = aut.operands.get(1) {
                let crosses_mod_def = b.instrs[expose_pos..aut_pos]
                    .iter()
                    .any(|w| w.defs().contains(m));
                if crosses_mod_def {
                    return Err(InstrumentError::OrderingUnsatisfiable(Loc::new(
                        f.name.clone(),
                        b.label.clone(),
                        aut_pos,
                    )));
                }
            }
            b.instrs.remove(aut_pos);
            b.instrs.insert(expose_pos, aut);
        }
    }
    Ok(out)
}

/// Ordering check without repair, shared with the validator: returns the
/// offending `(block, aut position, exposing position)` triples.
pub fn ordering_violations(f: &AsmFunction) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    for b in &f.blocks {
        for (pos, i) in b.instrs.iter().enumerate() {
            if i.meta.is_none() || !i.mnemonic.is_pac_auth() {
                continue;
            }
            let Some(Operand::Reg(v)) = i.operands.first() else {
                continue;
            };
            let window_start = b.instrs[..pos]
                .iter()
                .rposition(|w| w.defs().contains(v))
                .map(|k| k + 1)
                .unwrap_or(0);
            for (k, w) in b.instrs.iter().enumerate().take(pos).skip(window_start) {
                if exposes(w, *v) {
                    out.push((b.label.clone(), pos, k));
                }
            }
        }
    }
    out
}
