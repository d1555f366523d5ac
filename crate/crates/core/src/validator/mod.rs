//! Independent checking of hardened output against its plan, plus
//! instruction-count statistics.
//!
//! The validator never consults instrumenter internals: it re-parses the
//! emitted text (standing in for disassembly) and checks it against the
//! plan and policies alone.

mod rules;
mod stats;

pub use rules::{default_rules, Rule, RuleId, ValidationContext, Violation};
pub use stats::{stats, OverheadStats};

use serde::{Deserialize, Serialize};

use crate::asm::{emit_program, parse_program, AsmProgram};
use crate::policy::{InstrumentationPlan, PolicySet};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// One violation per line: rule id, loc, detail.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for v in &self.violations {
            out.push_str(&format!("{} {} {}\n", v.rule, v.loc, v.detail));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Emit, reparse, and run every registered rule.
pub fn validate(
    p: &AsmProgram,
    plan: &InstrumentationPlan,
    policies: &PolicySet,
) -> ValidationReport {
    // Round-trip through text to stay independent of in-memory state.
    let reparsed = emit_program(p)
        .ok()
        .and_then(|text| parse_program(&text).ok().map(|r| r.program))
        .unwrap_or_else(|| p.clone());
    let cx = ValidationContext {
        program: &reparsed,
        plan,
        policies,
    };
    let mut violations = Vec::new();
    for rule in default_rules() {
        violations.extend(rule.check(&cx));
    }
    violations.sort_by(|a, b| (a.rule, &a.loc).cmp(&(b.rule, &b.loc)));
    ValidationReport { violations }
}
