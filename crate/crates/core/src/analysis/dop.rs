//! DOP-sensitive conditional branches and the values that need
//! speculation protection on their guarded paths.

use crate::asm::{AsmFunction, AsmProgram, Cond, Instr, Loc, MemOffset, Mnemonic, Operand, Reg};
use crate::policy::{PolicySet, PolicyTuple, TupleKind, VarId};

use super::taint::TaintSummary;
use super::AnalysisError;

/// A conditional branch whose comparison inputs carry external-input taint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CondBranchInfo {
    /// The `b.<cond>` site.
    pub site: Loc,
    /// The `cmp` feeding it.
    pub cmp_loc: Loc,
    pub condition_inputs: Vec<Reg>,
    pub tainted: bool,
    pub taken_target: String,
    pub fallthrough_target: Option<String>,
}

/// One guarded side of a flagged branch: the value consumed there and the
/// condition under which that side is architecturally entered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpectreCandidate {
    pub branch: CondBranchInfo,
    /// The csel condition: holds exactly when the guarded side is the
    /// architectural path.
    pub guarded_cond: Cond,
    /// Protected value, at its defining location.
    pub value: VarId,
    /// First tainted-address load on the guarded side.
    pub use_loc: Loc,
    pub guarded_is_taken: bool,
}

/// Conditional branches whose `cmp` inputs are tainted. Untainted branches
/// are reported with `tainted = false` only if requested by callers; this
/// returns the flagged ones.
pub fn find_dop_branches(p: &AsmProgram, taint: &TaintSummary) -> Vec<CondBranchInfo> {
    let mut out = Vec::new();
    for f in &p.functions {
        for (bi, b) in f.blocks.iter().enumerate() {
            let originals: Vec<&Instr> = b.instrs.iter().filter(|i| i.meta.is_none()).collect();
            for (idx, i) in originals.iter().enumerate() {
                if i.mnemonic != Mnemonic::BCond {
                    continue;
                }
                // Find the cmp feeding this branch, scanning back in-block.
                let mut cmp = None;
                for k in (0..idx).rev() {
                    if originals[k].mnemonic == Mnemonic::Cmp {
                        cmp = Some((k, originals[k]));
                        break;
                    }
                }
                let Some((cmp_idx, cmp_instr)) = cmp else {
                    continue;
                };
                let inputs: Vec<Reg> = cmp_instr.uses();
                if inputs.is_empty() {
                    continue;
                }
                let cmp_loc = Loc::new(f.name.clone(), b.label.clone(), cmp_idx);
                let tainted = inputs.iter().any(|r| taint.is_tainted(&cmp_loc, *r));
                if !tainted {
                    continue;
                }
                let taken_target = i.branch_target().unwrap_or("").to_string();
                let fallthrough_target = f.blocks.get(bi + 1).map(|nb| nb.label.clone());
                out.push(CondBranchInfo {
                    site: Loc::new(f.name.clone(), b.label.clone(), idx),
                    cmp_loc,
                    condition_inputs: inputs,
                    tainted,
                    taken_target,
                    fallthrough_target,
                });
            }
        }
    }
    out
}

/// The defining site of `reg` as observed at `at`, tracing backwards in
/// linear program order across block boundaries (straight-line shapes) and
/// through store/reload of the same frame slot or region cell. `None` when
/// no definition precedes `at`.
pub fn trace_source(f: &AsmFunction, reg: Reg, at: &Loc) -> Option<Loc> {
    let linear: Vec<(Loc, &Instr)> = f.locs().collect();
    let at_pos = linear.iter().position(|(l, _)| l == at)?;
    let mut want_reg = reg;
    let mut upper = at_pos;
    let mut result = None;
    for _ in 0..8 {
        let def_pos = (0..upper)
            .rev()
            .find(|k| linear[*k].1.defs().contains(&want_reg))?;
        result = Some(linear[def_pos].0.clone());
        let def = linear[def_pos].1;
        // A reload continues the chain at the matching store's value register.
        if matches!(def.mnemonic, Mnemonic::Ldr | Mnemonic::Ldrb) {
            if let Some(m) = def.mem_operand() {
                let store_pos = (0..def_pos).rev().find(|k| {
                    let i = linear[*k].1;
                    matches!(i.mnemonic, Mnemonic::Str | Mnemonic::Strb)
                        && i.mem_operand() == Some(m)
                });
                if let Some(sp) = store_pos {
                    if let Some(Operand::Reg(src)) = linear[sp].1.operands.first() {
                        want_reg = *src;
                        upper = sp;
                        continue;
                    }
                }
            }
        }
        break;
    }
    result
}

/// Guarded-side protection candidates for each flagged branch.
pub fn derive_spectre_candidates(
    p: &AsmProgram,
    taint: &TaintSummary,
    branches: &[CondBranchInfo],
) -> Vec<SpectreCandidate> {
    let mut out = Vec::new();
    for br in branches {
        let Some(f) = p.function(&br.site.func) else {
            continue;
        };
        let cond = p
            .instr_at(&br.site)
            .and_then(|i| i.cond())
            .unwrap_or(Cond::Eq);
        let sides = [
            (Some(br.taken_target.clone()), cond, true),
            (br.fallthrough_target.clone(), cond.invert(), false),
        ];
        for (target, guard_cond, is_taken) in sides {
            let Some(label) = target else { continue };
            let Some(block) = f.block(&label) else {
                continue;
            };
            let originals: Vec<&Instr> =
                block.instrs.iter().filter(|i| i.meta.is_none()).collect();
            let mut found = None;
            for (idx, i) in originals.iter().enumerate() {
                if !matches!(i.mnemonic, Mnemonic::Ldr | Mnemonic::Ldrb) {
                    continue;
                }
                let Some(m) = i.mem_operand() else { continue };
                let use_loc = Loc::new(f.name.clone(), label.clone(), idx);
                let mut tainted_addr_reg = None;
                if taint.is_tainted(&use_loc, m.base) {
                    tainted_addr_reg = Some(m.base);
                }
                if let MemOffset::Reg(r) = m.offset {
                    if tainted_addr_reg.is_none() && taint.is_tainted(&use_loc, r) {
                        tainted_addr_reg = Some(r);
                    }
                }
                let Some(vreg) = tainted_addr_reg else { continue };
                found = resolve_protected(f, taint, br, &originals, idx, vreg, &label);
                break;
            }
            if let Some((vreg, def_loc, use_loc)) = found {
                out.push(SpectreCandidate {
                    branch: br.clone(),
                    guarded_cond: guard_cond,
                    value: VarId::new(vreg, def_loc),
                    use_loc,
                    guarded_is_taken: is_taken,
                });
            }
        }
    }
    out
}

/// Walk a tainted address register defined inside the guarded block back
/// to a register that already exists at the branch, so that the signed
/// value is live at the comparison. The protected use becomes the first
/// guarded-block instruction that reads the resolved register.
fn resolve_protected(
    f: &AsmFunction,
    taint: &TaintSummary,
    br: &CondBranchInfo,
    guarded: &[&Instr],
    load_idx: usize,
    mut vreg: Reg,
    guarded_label: &str,
) -> Option<(Reg, Loc, Loc)> {
    for _ in 0..4 {
        // Is vreg defined inside the guarded block before the load?
        let inner_def = (0..=load_idx)
            .rev()
            .find(|k| guarded[*k].defs().contains(&vreg) && *k < load_idx);
        match inner_def {
            None => break,
            Some(def_idx) => {
                let def_loc = Loc::new(f.name.clone(), guarded_label.to_string(), def_idx);
                let tainted_src = guarded[def_idx]
                    .uses()
                    .into_iter()
                    .find(|u| taint.is_tainted(&def_loc, *u));
                {
                    let src = tainted_src?;
                    vreg = src
                }
            }
        }
    }
    // The resolved register must exist at the branch.
    let def_loc = trace_source(f, vreg, &br.site)?;
    // First guarded-block instruction reading the protected register.
    let use_idx = guarded
        .iter()
        .position(|i| i.uses().contains(&vreg))?;
    let use_loc = Loc::new(f.name.clone(), guarded_label.to_string(), use_idx);
    Some((vreg, def_loc, use_loc))
}

/// Resolve external `spectre <branch-site> <tag>` lines against the
/// analyzed candidates, producing concrete tuples.
pub fn resolve_pending_spectre(
    set: &mut PolicySet,
    candidates: &[SpectreCandidate],
) -> Result<(), AnalysisError> {
    let pending = std::mem::take(&mut set.pending_spectre_sites);
    for (site, tag) in pending {
        let matched: Vec<&SpectreCandidate> = candidates
            .iter()
            .filter(|c| c.branch.site == site || c.branch.cmp_loc == site)
            .collect();
        if matched.is_empty() {
            return Err(AnalysisError::UnmatchedSpectreSite(site));
        }
        for c in matched {
            let tuple = PolicyTuple {
                var: c.value.clone(),
                loc: spectre_anchor(c),
                tag,
                kind: TupleKind::Spectre,
            };
            if !set.spectre.contains(&tuple) {
                set.spectre.push(tuple);
            }
        }
    }
    set.sort();
    Ok(())
}

/// Grouping location for a spectre tuple: the value's defining site when
/// the value is independent of the comparison (which allows fusion with a
/// DFI source at the same spot), else the cmp site.
pub fn spectre_anchor(c: &SpectreCandidate) -> Loc {
    if c.branch.condition_inputs.contains(&c.value.reg) {
        c.branch.cmp_loc.clone()
    } else {
        c.value.def_loc.clone()
    }
}

/// Internal DFI protection for a flagged branch: sign the first tainted
/// branch variable at its source, verify before the comparison. `None`
/// when no definition is visible to anchor the signature at.
pub fn branch_variable_pair(
    br: &CondBranchInfo,
    f: &AsmFunction,
    taint: &TaintSummary,
) -> Option<(VarId, Loc)> {
    let var_reg = *br
        .condition_inputs
        .iter()
        .find(|r| taint.is_tainted(&br.cmp_loc, **r))?;
    let def = trace_source(f, var_reg, &br.cmp_loc)?;
    Some((VarId::new(var_reg, def), br.cmp_loc.clone()))
}
