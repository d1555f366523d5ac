//! Well-formedness rules, each an independent check over the reparsed
//! hardened text plus the plan. Registered by id and run in order.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::asm::{AsmProgram, Instr, Mechanism, Mnemonic, Operand, Reg};
use crate::instrument::ordering_violations;
use crate::policy::{InstrumentationPlan, PolicySet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleId {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleId::R1 => "R1",
            RuleId::R2 => "R2",
            RuleId::R3 => "R3",
            RuleId::R4 => "R4",
            RuleId::R5 => "R5",
            RuleId::R6 => "R6",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: RuleId,
    pub loc: String,
    pub detail: String,
}

pub struct ValidationContext<'a> {
    /// The hardened program after an emit/reparse round trip.
    pub program: &'a AsmProgram,
    pub plan: &'a InstrumentationPlan,
    pub policies: &'a PolicySet,
}

pub trait Rule {
    fn id(&self) -> RuleId;
    fn describe(&self) -> &'static str;
    fn check(&self, cx: &ValidationContext<'_>) -> Vec<Violation>;
}

pub fn default_rules() -> Vec<Box<dyn Rule + Send + Sync>> {
    vec![
        Box::new(BtiCoverage),
        Box::new(PlannedPresence),
        Box::new(ModifierPairing),
        Box::new(AuthOrdering),
        Box::new(CallSiteTag),
        Box::new(ProvenanceAccounting),
    ]
}

/// R1: every indirect-call-target function begins with `bti c`.
pub struct BtiCoverage;

impl Rule for BtiCoverage {
    fn id(&self) -> RuleId {
        RuleId::R1
    }

    fn describe(&self) -> &'static str {
        "indirect-call targets begin with bti c"
    }

    fn check(&self, cx: &ValidationContext<'_>) -> Vec<Violation> {
        let mut out = Vec::new();
        for func in cx.policies.target_tags.keys() {
            let ok = cx
                .program
                .function(func)
                .and_then(|f| f.blocks.first())
                .and_then(|b| b.instrs.first())
                .map(|i| i.mnemonic == Mnemonic::Bti)
                .unwrap_or(false);
            if !ok {
                out.push(Violation {
                    rule: RuleId::R1,
                    loc: func.clone(),
                    detail: format!("function '{func}' does not start with bti c"),
                });
            }
        }
        out
    }
}

fn first_reg(i: &Instr) -> Option<Reg> {
    match i.operands.first() {
        Some(Operand::Reg(r)) => Some(*r),
        _ => None,
    }
}

/// Is this insertion the call-site tag transfer owned by R5?
fn is_site_tag_mov(ins: &crate::policy::PlannedInsertion) -> bool {
    ins.instr.mnemonic == Mnemonic::Mov
        && first_reg(&ins.instr) == Some(Reg::X(11))
        && ins.sources.iter().any(|s| s.starts_with("cfi:"))
}

/// R2: every planned insertion is present in its function (mechanism A is
/// R1's domain, site tag movs are R5's, modifier values are R3's).
pub struct PlannedPresence;

impl Rule for PlannedPresence {
    fn id(&self) -> RuleId {
        RuleId::R2
    }

    fn describe(&self) -> &'static str {
        "planned insertions are present"
    }

    fn check(&self, cx: &ValidationContext<'_>) -> Vec<Violation> {
        let mut out = Vec::new();
        // Group planned and present by (func, mnemonic, mechanism, dest).
        type Key = (String, Mnemonic, Mechanism, Option<Reg>);
        let mut planned: BTreeMap<Key, (usize, String)> = BTreeMap::new();
        for ins in &cx.plan.insertions {
            if ins.mechanism == Mechanism::A || is_site_tag_mov(ins) {
                continue;
            }
            let key = (
                ins.anchor.func.clone(),
                ins.instr.mnemonic,
                ins.mechanism,
                first_reg(&ins.instr),
            );
            let entry = planned.entry(key).or_insert((0, ins.anchor.to_string()));
            entry.0 += 1;
        }
        let mut present: BTreeMap<Key, usize> = BTreeMap::new();
        for f in &cx.program.functions {
            for b in &f.blocks {
                for i in &b.instrs {
                    if let Some(mech) = i.meta {
                        *present
                            .entry((f.name.clone(), i.mnemonic, mech, first_reg(i)))
                            .or_default() += 1;
                    }
                }
            }
        }
        for (key, (count, anchor)) in planned {
            let have = present.get(&key).copied().unwrap_or(0);
            if have < count {
                out.push(Violation {
                    rule: RuleId::R2,
                    loc: anchor,
                    detail: format!(
                        "planned {:?} ({}, mechanism {}) missing: {} of {} present",
                        key.1, key.0, key.2, have, count
                    ),
                });
            }
        }
        out
    }
}

/// R3: paired sign/auth instructions carry equal modifier values.
pub struct ModifierPairing;

impl ModifierPairing {
    /// The immediate feeding an inserted PA instruction's modifier register:
    /// the closest preceding janus `mov <modreg>, #imm` in the same block.
    fn modifier_imm(p: &AsmProgram, planned: &crate::policy::PlannedInsertion) -> Option<u64> {
        let f = p.function(&planned.anchor.func)?;
        for b in &f.blocks {
            for (pos, i) in b.instrs.iter().enumerate() {
                if i.meta != Some(planned.mechanism) || i.mnemonic != planned.instr.mnemonic {
                    continue;
                }
                if first_reg(i) != first_reg(&planned.instr) {
                    continue;
                }
                let modreg = match i.operands.get(1) {
                    Some(Operand::Reg(r)) => *r,
                    _ => continue,
                };
                for w in b.instrs[..pos].iter().rev() {
                    if w.meta.is_some()
                        && w.mnemonic == Mnemonic::Mov
                        && first_reg(w) == Some(modreg)
                    {
                        if let Some(Operand::Imm(v)) = w.operands.get(1) {
                            return Some(*v);
                        }
                        return None;
                    }
                    if w.defs().contains(&modreg) {
                        break;
                    }
                }
            }
        }
        None
    }
}

impl Rule for ModifierPairing {
    fn id(&self) -> RuleId {
        RuleId::R3
    }

    fn describe(&self) -> &'static str {
        "sign/auth pairs use equal modifiers"
    }

    fn check(&self, cx: &ValidationContext<'_>) -> Vec<Violation> {
        let mut out = Vec::new();
        for (sign_id, aut_id) in &cx.plan.pairings {
            let (Some(sign), Some(aut)) = (
                cx.plan.insertions.get(*sign_id),
                cx.plan.insertions.get(*aut_id),
            ) else {
                continue;
            };
            let sign_imm = Self::modifier_imm(cx.program, sign);
            let aut_imm = Self::modifier_imm(cx.program, aut);
            if let (Some(s), Some(a)) = (sign_imm, aut_imm) {
                if s != a {
                    out.push(Violation {
                        rule: RuleId::R3,
                        loc: aut.anchor.to_string(),
                        detail: format!(
                            "sign modifier {s:#x} does not match auth modifier {a:#x}"
                        ),
                    });
                }
            }
        }
        out
    }
}

/// R4: verification precedes every dependent use within its block.
pub struct AuthOrdering;

impl Rule for AuthOrdering {
    fn id(&self) -> RuleId {
        RuleId::R4
    }

    fn describe(&self) -> &'static str {
        "authentication precedes dependent uses"
    }

    fn check(&self, cx: &ValidationContext<'_>) -> Vec<Violation> {
        let mut out = Vec::new();
        for f in &cx.program.functions {
            for (block, aut_pos, use_pos) in ordering_violations(f) {
                out.push(Violation {
                    rule: RuleId::R4,
                    loc: format!("{}:{}:{}", f.name, block, aut_pos),
                    detail: format!(
                        "verification at position {aut_pos} follows a dependent use at {use_pos}"
                    ),
                });
            }
        }
        out
    }
}

/// R5: every `blr` site is preceded in its block by a tag transfer.
pub struct CallSiteTag;

impl Rule for CallSiteTag {
    fn id(&self) -> RuleId {
        RuleId::R5
    }

    fn describe(&self) -> &'static str {
        "indirect call sites pass a tag"
    }

    fn check(&self, cx: &ValidationContext<'_>) -> Vec<Violation> {
        let mut out = Vec::new();
        for f in &cx.program.functions {
            for b in &f.blocks {
                for (pos, i) in b.instrs.iter().enumerate() {
                    if i.mnemonic != Mnemonic::Blr {
                        continue;
                    }
                    let has_tag_mov = b.instrs[..pos].iter().any(|w| {
                        w.meta == Some(Mechanism::B)
                            && w.mnemonic == Mnemonic::Mov
                            && first_reg(w) == Some(Reg::X(11))
                            && matches!(w.operands.get(1), Some(Operand::Imm(_)))
                    });
                    if !has_tag_mov {
                        out.push(Violation {
                            rule: RuleId::R5,
                            loc: format!("{}:{}:{}", f.name, b.label, pos),
                            detail: "blr site lacks a preceding tag mov".to_string(),
                        });
                    }
                }
            }
        }
        out
    }
}

/// R6: no janus-tagged pac/aut/bti/csel beyond what the plan accounts for.
pub struct ProvenanceAccounting;

impl Rule for ProvenanceAccounting {
    fn id(&self) -> RuleId {
        RuleId::R6
    }

    fn describe(&self) -> &'static str {
        "no unplanned tagged instructions"
    }

    fn check(&self, cx: &ValidationContext<'_>) -> Vec<Violation> {
        let counted = |m: Mnemonic| {
            m.is_pac_sign()
                || m.is_pac_auth()
                || matches!(m, Mnemonic::Bti | Mnemonic::Csel)
        };
        let mut planned: BTreeMap<(String, Mnemonic, Mechanism), usize> = BTreeMap::new();
        for ins in &cx.plan.insertions {
            if counted(ins.instr.mnemonic) {
                *planned
                    .entry((
                        ins.anchor.func.clone(),
                        ins.instr.mnemonic,
                        ins.mechanism,
                    ))
                    .or_default() += 1;
            }
        }
        let mut out = Vec::new();
        let mut present: BTreeMap<(String, Mnemonic, Mechanism), (usize, String)> =
            BTreeMap::new();
        for f in &cx.program.functions {
            for b in &f.blocks {
                for (pos, i) in b.instrs.iter().enumerate() {
                    if let Some(mech) = i.meta {
                        if counted(i.mnemonic) {
                            let e = present
                                .entry((f.name.clone(), i.mnemonic, mech))
                                .or_insert((0, String::new()));
                            e.0 += 1;
                            e.1 = format!("{}:{}:{}", f.name, b.label, pos);
                        }
                    }
                }
            }
        }
        for (key, (have, loc)) in present {
            let want = planned.get(&key).copied().unwrap_or(0);
            if have > want {
                out.push(Violation {
                    rule: RuleId::R6,
                    loc,
                    detail: format!(
                        "{} tagged {:?} (mechanism {}) present but only {} planned",
                        have, key.1, key.2, want
                    ),
                });
            }
        }
        out
    }
}
