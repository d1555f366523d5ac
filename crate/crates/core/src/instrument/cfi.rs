//! Mechanism B: PA-backed fine-grained CFI.
//!
//! Call sites pass their class tag in x11; every indirect-call target
//! verifies the incoming tag at entry and binds the outcome to a PA
//! authentication, so a wrong-class transfer poisons the modifier and
//! faults (architecturally) or squashes (speculatively).
//!
//! Four check shapes exist, chosen per target:
//! - fresh (carrier reuse off): sign x10 at the site with a fresh modifier
//!   register, verify at entry with another
//! - existing carrier: reuse a DFI-signed argument register; its sink
//!   verification merges into the entry check
//! - link register: non-leaf targets without a carrier sign LR at entry
//!   and verify at the epilogue
//! - x10 fallback: leaf targets without a carrier, tag doubles as modifier

use std::collections::BTreeMap;

use crate::asm::{AsmProgram, Cond, Loc, Mechanism, Mnemonic, Reg};
use crate::policy::{CfiSitePolicy, InstrumentationPlan, ModifierTag, Position, TupleKind};

use super::builder::{cmp_imm, csel, mov_imm, pac, ScratchAlloc, FALLBACK_CARRIER, TAG_REG};
use super::carrier::{Carrier, CarrierChoice};
use super::InstrumentError;

/// Which check shape a target function uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Scheme {
    Fresh,
    Existing { reg: Reg, orig_mod: ModifierTag },
    LinkRegister,
    General,
}

pub(crate) struct CfiPlanOutcome {
    /// DFI sink tuple ids whose verification the entry check subsumed.
    pub carried_sink_vars: Vec<crate::policy::VarId>,
    /// Carrier-backed entry verifications waiting for their signing
    /// instruction, which mechanism C plans later: (aut id, reg, modifier).
    pub pending_carrier_pairs: Vec<(usize, Reg, ModifierTag)>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn plan_cfi(
    plan: &mut InstrumentationPlan,
    alloc: &mut ScratchAlloc<'_>,
    p: &AsmProgram,
    sites: &[CfiSitePolicy],
    target_tags: &BTreeMap<String, ModifierTag>,
    carriers: Option<&[CarrierChoice]>,
    dfi_tuples: &[crate::policy::PolicyTuple],
) -> Result<CfiPlanOutcome, InstrumentError> {
    // Resolve each target's scheme from the carrier choices of the sites
    // that can reach it; every site must agree.
    let mut scheme_by_target: BTreeMap<String, Scheme> = BTreeMap::new();
    for (func, tag) in target_tags {
        let reaching: Vec<&CfiSitePolicy> = sites.iter().filter(|s| s.tag == *tag).collect();
        let mut scheme = match carriers {
            None => Scheme::Fresh,
            Some(_) if reaching.is_empty() => Scheme::General,
            Some(choices) => {
                let mut resolved: Option<Scheme> = None;
                for site in &reaching {
                    let choice = choices
                        .iter()
                        .find(|c| c.site == site.site)
                        .map(|c| &c.carrier);
                    let s = match choice {
                        Some(Carrier::Existing { reg, orig_mod }) => Scheme::Existing {
                            reg: *reg,
                            orig_mod: *orig_mod,
                        },
                        Some(Carrier::LinkRegister) => Scheme::LinkRegister,
                        Some(Carrier::GeneralRegister) | None => Scheme::General,
                    };
                    match &resolved {
                        None => resolved = Some(s),
                        Some(existing) if *existing == s => {}
                        Some(_) => {
                            return Err(InstrumentError::CarrierConflict(site.site.clone()))
                        }
                    }
                }
                resolved.unwrap_or(Scheme::General)
            }
        };
        // The link-register shape needs a return to verify at.
        if scheme == Scheme::LinkRegister
            && p.function(func).map(|f| f.is_leaf()).unwrap_or(true)
        {
            scheme = Scheme::General;
        }
        scheme_by_target.insert(func.clone(), scheme);
    }

    // Site side: indirect call sites plus direct calls to checked targets.
    let mut site_sign_ids: Vec<(ModifierTag, usize)> = Vec::new();
    for site in sites {
        let scheme = scheme_for_tag(&scheme_by_target, target_tags, site.tag);
        let ids = plan_site_side(plan, alloc, &site.site, site.tag, &scheme)?;
        for id in ids {
            site_sign_ids.push((site.tag, id));
        }
        record_scratch(plan, &site.site, &scheme, true);
    }
    for (loc, i) in p.locs() {
        if i.mnemonic != Mnemonic::Bl {
            continue;
        }
        let Some(target) = i.branch_target() else {
            continue;
        };
        let Some(tag) = target_tags.get(target) else {
            continue;
        };
        let scheme = scheme_by_target
            .get(target)
            .cloned()
            .unwrap_or(Scheme::General);
        let ids = plan_site_side(plan, alloc, &loc, *tag, &scheme)?;
        for id in ids {
            site_sign_ids.push((*tag, id));
        }
    }

    // Entry side, once per target function.
    let mut carried_sink_vars = Vec::new();
    let mut pending_carrier_pairs = Vec::new();
    for (func, tag) in target_tags {
        let Some(f) = p.function(func) else {
            return Err(InstrumentError::UnknownLoc(Loc::new(
                func.clone(),
                "",
                0,
            )));
        };
        let entry = Loc::new(f.name.clone(), f.entry.clone(), 0);
        let scheme = scheme_by_target.get(func).cloned().unwrap_or(Scheme::Fresh);
        match &scheme {
            Scheme::Fresh => {
                plan.push(
                    entry.clone(),
                    Position::Before,
                    5,
                    cmp_imm(TAG_REG, tag.0, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                let modreg = alloc.claim(func, &entry, &entry, &[TAG_REG])?;
                plan.push(
                    entry.clone(),
                    Position::Before,
                    6,
                    mov_imm(modreg, tag.0, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                plan.push(
                    entry.clone(),
                    Position::Before,
                    7,
                    csel(modreg, modreg, Reg::Xzr, Cond::Eq, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                let aut = plan.push(
                    entry.clone(),
                    Position::Before,
                    8,
                    pac(Mnemonic::Autda, FALLBACK_CARRIER, modreg, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                pair_sites(plan, &site_sign_ids, *tag, aut);
                plan.scratch_assignments
                    .push((format!("entry:{func}"), modreg));
                plan.scratch_assignments
                    .push((format!("entry:{func}"), FALLBACK_CARRIER));
            }
            Scheme::Existing { reg, orig_mod } => {
                plan.push(
                    entry.clone(),
                    Position::Before,
                    5,
                    cmp_imm(TAG_REG, tag.0, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                let modreg = alloc.claim(func, &entry, &entry, &[TAG_REG])?;
                plan.push(
                    entry.clone(),
                    Position::Before,
                    6,
                    mov_imm(modreg, orig_mod.0, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                plan.push(
                    entry.clone(),
                    Position::Before,
                    7,
                    csel(modreg, modreg, Reg::Xzr, Cond::Eq, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                let aut = plan.push(
                    entry.clone(),
                    Position::Before,
                    8,
                    pac(Mnemonic::Autda, *reg, modreg, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                // The carrier's signing instruction is planned by
                // mechanism C afterwards; record the pairing intent.
                pending_carrier_pairs.push((aut, *reg, *orig_mod));
                plan.scratch_assignments
                    .push((format!("entry:{func}"), modreg));
                // The entry verification consumes the carrier's protection.
                for t in dfi_tuples.iter().filter(|t| {
                    t.kind == TupleKind::DfiSink && t.var.reg == *reg && t.tag == *orig_mod
                }) {
                    carried_sink_vars.push(t.var.clone());
                }
            }
            Scheme::LinkRegister => {
                plan.push(
                    entry.clone(),
                    Position::Before,
                    5,
                    cmp_imm(TAG_REG, tag.0, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                let rets: Vec<Loc> = f
                    .locs()
                    .filter(|(_, i)| i.mnemonic == Mnemonic::Ret)
                    .map(|(l, _)| l)
                    .collect();
                let last_ret = rets.last().cloned().unwrap_or_else(|| entry.clone());
                let modreg = alloc.claim(func, &entry, &last_ret, &[TAG_REG])?;
                plan.push(
                    entry.clone(),
                    Position::Before,
                    6,
                    csel(modreg, Reg::Sp, Reg::Xzr, Cond::Eq, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                let sign = plan.push(
                    entry.clone(),
                    Position::Before,
                    7,
                    pac(Mnemonic::Pacia, crate::asm::LR, Reg::Sp, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                for ret in rets {
                    let aut = plan.push(
                        ret,
                        Position::Before,
                        5,
                        pac(Mnemonic::Autia, crate::asm::LR, modreg, Mechanism::B),
                        Mechanism::B,
                        vec![format!("cfi-target:{func}")],
                    );
                    plan.pairings.push((sign, aut));
                }
                plan.scratch_assignments
                    .push((format!("entry:{func}"), modreg));
            }
            Scheme::General => {
                plan.push(
                    entry.clone(),
                    Position::Before,
                    5,
                    cmp_imm(TAG_REG, tag.0, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                plan.push(
                    entry.clone(),
                    Position::Before,
                    6,
                    csel(TAG_REG, TAG_REG, Reg::Xzr, Cond::Eq, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                let aut = plan.push(
                    entry.clone(),
                    Position::Before,
                    7,
                    pac(Mnemonic::Autda, FALLBACK_CARRIER, TAG_REG, Mechanism::B),
                    Mechanism::B,
                    vec![format!("cfi-target:{func}")],
                );
                pair_sites(plan, &site_sign_ids, *tag, aut);
                plan.scratch_assignments
                    .push((format!("entry:{func}"), FALLBACK_CARRIER));
            }
        }
    }
    Ok(CfiPlanOutcome {
        carried_sink_vars,
        pending_carrier_pairs,
    })
}

fn scheme_for_tag(
    scheme_by_target: &BTreeMap<String, Scheme>,
    target_tags: &BTreeMap<String, ModifierTag>,
    tag: ModifierTag,
) -> Scheme {
    for (func, t) in target_tags {
        if *t == tag {
            if let Some(s) = scheme_by_target.get(func) {
                return s.clone();
            }
        }
    }
    Scheme::General
}

/// Insertions before a call instruction: pass the tag, and for schemes
/// without an existing carrier, sign the fallback carrier.
fn plan_site_side(
    plan: &mut InstrumentationPlan,
    alloc: &mut ScratchAlloc<'_>,
    site: &Loc,
    tag: ModifierTag,
    scheme: &Scheme,
) -> Result<Vec<usize>, InstrumentError> {
    plan.push(
        site.clone(),
        Position::Before,
        30,
        mov_imm(TAG_REG, tag.0, Mechanism::B),
        Mechanism::B,
        vec![format!("cfi:{site}")],
    );
    let mut sign_ids = Vec::new();
    match scheme {
        Scheme::Fresh => {
            let modreg = alloc.claim(&site.func, site, site, &[TAG_REG])?;
            plan.push(
                site.clone(),
                Position::Before,
                31,
                mov_imm(modreg, tag.0, Mechanism::B),
                Mechanism::B,
                vec![format!("cfi:{site}")],
            );
            sign_ids.push(plan.push(
                site.clone(),
                Position::Before,
                32,
                pac(Mnemonic::Pacda, FALLBACK_CARRIER, modreg, Mechanism::B),
                Mechanism::B,
                vec![format!("cfi:{site}")],
            ));
            plan.scratch_assignments
                .push((format!("site:{site}"), modreg));
        }
        Scheme::General => {
            sign_ids.push(plan.push(
                site.clone(),
                Position::Before,
                31,
                pac(Mnemonic::Pacda, FALLBACK_CARRIER, TAG_REG, Mechanism::B),
                Mechanism::B,
                vec![format!("cfi:{site}")],
            ));
        }
        Scheme::Existing { .. } | Scheme::LinkRegister => {}
    }
    Ok(sign_ids)
}

fn pair_sites(
    plan: &mut InstrumentationPlan,
    site_sign_ids: &[(ModifierTag, usize)],
    tag: ModifierTag,
    aut_id: usize,
) {
    for (t, sign) in site_sign_ids {
        if *t == tag {
            plan.pairings.push((*sign, aut_id));
        }
    }
}

/// Resolve a deferred carrier pairing once mechanism C has planned the
/// carrier's signing instruction.
pub(crate) fn resolve_carrier_pairs(
    plan: &mut InstrumentationPlan,
    dfi_tuples: &[crate::policy::PolicyTuple],
    pending: &[(usize, Reg, ModifierTag)],
) {
    for (aut_id, reg, orig_mod) in pending {
        let Some(src) = dfi_tuples.iter().find(|t| {
            t.kind == TupleKind::DfiSource && t.var.reg == *reg && t.tag == *orig_mod
        }) else {
            continue;
        };
        let src_id = src.id();
        let sign = plan
            .insertions
            .iter()
            .find(|i| i.instr.mnemonic.is_pac_sign() && i.sources.contains(&src_id))
            .map(|i| i.id);
        if let Some(sign_id) = sign {
            plan.pairings.push((sign_id, *aut_id));
        }
    }
}

fn record_scratch(
    plan: &mut InstrumentationPlan,
    site: &Loc,
    scheme: &Scheme,
    _is_site: bool,
) {
    if matches!(scheme, Scheme::General) {
        plan.scratch_assignments
            .push((format!("site:{site}"), FALLBACK_CARRIER));
    }
}
