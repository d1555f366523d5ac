//! Instruction-count and code-size statistics. Instructions encode to
//! four bytes each, so size overhead tracks instruction-count overhead.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::asm::{AsmProgram, Mechanism};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadStats {
    pub instrs_before: usize,
    pub instrs_after: usize,
    pub bytes_before: usize,
    pub bytes_after: usize,
    /// Insertions per mechanism, read from provenance tags.
    pub by_mechanism: BTreeMap<String, usize>,
    pub overhead_percent: f64,
}

impl fmt::Display for OverheadStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "instructions: {} -> {} ({:+.2}%)",
            self.instrs_before, self.instrs_after, self.overhead_percent
        )?;
        writeln!(f, "code size: {} -> {} bytes", self.bytes_before, self.bytes_after)?;
        for (mech, count) in &self.by_mechanism {
            writeln!(f, "mechanism {mech}: {count} insertions")?;
        }
        Ok(())
    }
}

pub fn stats(before: &AsmProgram, after: &AsmProgram) -> OverheadStats {
    let instrs_before = before.instr_count();
    let instrs_after = after.instr_count();
    let mut by_mechanism: BTreeMap<String, usize> = BTreeMap::new();
    for m in [
        Mechanism::A,
        Mechanism::B,
        Mechanism::C,
        Mechanism::D,
        Mechanism::E,
    ] {
        by_mechanism.insert(m.name().to_string(), 0);
    }
    for f in &after.functions {
        for b in &f.blocks {
            for i in &b.instrs {
                if let Some(m) = i.meta {
                    *by_mechanism.entry(m.name().to_string()).or_default() += 1;
                }
            }
        }
    }
    let overhead_percent = if instrs_before == 0 {
        0.0
    } else {
        (instrs_after as f64 - instrs_before as f64) / instrs_before as f64 * 100.0
    };
    OverheadStats {
        instrs_before,
        instrs_after,
        bytes_before: instrs_before * 4,
        bytes_after: instrs_after * 4,
        by_mechanism,
        overhead_percent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_program;

    #[test]
    fn identical_programs_have_zero_overhead() {
        let p = parse_program("f:\n mov x0, #1\n ret\n").unwrap().program;
        let s = stats(&p, &p);
        assert_eq!(s.overhead_percent, 0.0);
        assert_eq!(s.instrs_before, s.instrs_after);
    }

    #[test]
    fn hundred_instructions_plus_ten_is_ten_percent() {
        let mut body = String::from("f:\n");
        for _ in 0..99 {
            body.push_str(" nop\n");
        }
        body.push_str(" ret\n");
        let before = parse_program(&body).unwrap().program;
        let mut after_body = String::from("f:\n");
        for _ in 0..9 {
            after_body.push_str(" nop // janus:E\n");
        }
        for _ in 0..99 {
            after_body.push_str(" nop\n");
        }
        after_body.push_str(" pacda x0, x11 // janus:C\n ret\n");
        let after = parse_program(&after_body).unwrap().program;
        let s = stats(&before, &after);
        assert_eq!(s.instrs_before, 100);
        assert_eq!(s.instrs_after, 110);
        assert!((s.overhead_percent - 10.0).abs() < 1e-9);
        assert_eq!(s.by_mechanism["E"], 9);
        assert_eq!(s.by_mechanism["C"], 1);
        assert_eq!(s.bytes_after - s.bytes_before, 40);
    }
}
