//! Strip speculation-specific protection for net-overhead accounting:
//! mechanism-E instructions go away entirely, and CFI entry poison
//! selects become unconditional moves, leaving the architectural checks
//! in place.

use crate::asm::{AsmProgram, Instr, Mechanism, Mnemonic, Operand};

pub fn strip_spectre(p: &AsmProgram) -> AsmProgram {
    let mut out = p.clone();
    for f in &mut out.functions {
        for b in &mut f.blocks {
            let mut rebuilt: Vec<Instr> = Vec::with_capacity(b.instrs.len());
            for i in &b.instrs {
                match i.meta {
                    Some(Mechanism::E) => continue,
                    Some(Mechanism::B) if i.mnemonic == Mnemonic::Csel => {
                        // csel xd, xn, xzr, eq  ->  mov xd, xn
                        let (Some(dst), Some(src)) =
                            (i.operands.first().cloned(), i.operands.get(1).cloned())
                        else {
                            rebuilt.push(i.clone());
                            continue;
                        };
                        let replacement = match src {
                            Operand::Reg(_) => Instr::tagged(
                                Mnemonic::Mov,
                                vec![dst, src],
                                Mechanism::B,
                            ),
                            _ => i.clone(),
                        };
                        rebuilt.push(replacement);
                    }
                    _ => rebuilt.push(i.clone()),
                }
            }
            b.instrs = rebuilt;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_program;

    #[test]
    fn unhardened_program_is_unchanged() {
        let p = parse_program("f:\n mov x0, #1\n ret\n").unwrap().program;
        assert_eq!(strip_spectre(&p), p);
    }
}
