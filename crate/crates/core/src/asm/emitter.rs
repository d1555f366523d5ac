//! Canonical text emission. Output always reparses to a structurally
//! identical program; provenance tags come out as trailing comments.

use std::fmt::Write;

use super::inst::Operand;
use super::program::{AsmProgram, DataItem};
use super::EmitError;

pub fn emit_program(p: &AsmProgram) -> Result<String, EmitError> {
    check_references(p)?;
    let mut out = String::new();
    for f in &p.functions {
        if f.exported {
            let _ = writeln!(out, ".global {}", f.name);
        }
        for (i, b) in f.blocks.iter().enumerate() {
            if i == 0 && b.label == f.name {
                let _ = writeln!(out, "{}:", f.name);
            } else {
                if i == 0 {
                    let _ = writeln!(out, "{}:", f.name);
                }
                let _ = writeln!(out, "{}:", b.label);
            }
            for instr in &b.instrs {
                let _ = writeln!(out, "\t{instr}");
            }
        }
        out.push('\n');
    }
    if !p.data.is_empty() {
        out.push_str(".data\n");
        for d in &p.data {
            let _ = writeln!(out, "{}:", d.name);
            for item in &d.items {
                match item {
                    DataItem::Byte(v) => {
                        let _ = writeln!(out, "\t.byte {v:#x}");
                    }
                    DataItem::Quad(v) => {
                        let _ = writeln!(out, "\t.quad {v:#x}");
                    }
                    DataItem::QuadSym(s) => {
                        let _ = writeln!(out, "\t.quad {s}");
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_references(p: &AsmProgram) -> Result<(), EmitError> {
    for f in &p.functions {
        for b in &f.blocks {
            for i in &b.instrs {
                if let Some(target) = i.branch_target() {
                    let local = f.blocks.iter().any(|bb| bb.label == target);
                    let cross = p.function(target).is_some();
                    if !local && !(i.mnemonic == super::inst::Mnemonic::Bl && cross) {
                        // bl may also target external symbols.
                        if i.mnemonic != super::inst::Mnemonic::Bl {
                            return Err(EmitError::UnresolvedLabel {
                                label: target.to_string(),
                                func: f.name.clone(),
                            });
                        }
                    }
                }
                for op in &i.operands {
                    if let Operand::SymAddr(s) = op {
                        if p.function(s).is_none() && p.region(s).is_none() {
                            return Err(EmitError::UnresolvedLabel {
                                label: s.clone(),
                                func: f.name.clone(),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
