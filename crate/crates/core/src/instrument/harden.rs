//! The hardening pipeline: landing pads, data integrity, speculation
//! checks, CFI, and ordering, composed over one insertion plan.

use std::collections::BTreeMap;

use crate::analysis::{
    compute_taint, derive_spectre_candidates, find_dop_branches,
    resolve_pending_spectre, spectre_anchor, Liveness, SpectreCandidate,
};
use crate::asm::{AsmProgram, Loc};
use crate::policy::{InstrumentationPlan, PolicySet, PolicyTuple, VarId};

use super::builder::{
    apply_plan, pair_dfi, plan_bti, plan_dfi_pair, plan_fused_dual, plan_serial_dual,
    plan_spectre, ScratchAlloc,
};
use super::carrier::{fuse_cfi_context, CarrierChoice, SiteTargets};
use super::cfi::plan_cfi;
use super::fusion::fuse_modifiers;
use super::ordering::enforce_ordering;
use super::InstrumentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HardenOptions {
    /// Modifier fusion: one PA pair for dual-protected values.
    pub mf: bool,
    /// Carrier reuse: piggyback CFI checks on existing protection.
    pub cr: bool,
}

impl Default for HardenOptions {
    fn default() -> HardenOptions {
        HardenOptions { mf: true, cr: true }
    }
}

/// Everything instrumentation needs beyond the program and policy set.
pub struct HardenContext {
    pub candidates: Vec<SpectreCandidate>,
    /// Class members per target function (for mechanism A).
    pub class_members: Vec<String>,
}

impl HardenContext {
    /// Derive candidates and membership from the program and policies.
    /// Input regions drive taint; they come from the analysis sidecar.
    pub fn derive(p: &AsmProgram, policies: &PolicySet, input_regions: &[String]) -> HardenContext {
        let taint = compute_taint(p, input_regions);
        let branches = find_dop_branches(p, &taint);
        let candidates = derive_spectre_candidates(p, &taint, &branches);
        let class_members = policies.target_tags.keys().cloned().collect();
        HardenContext {
            candidates,
            class_members,
        }
    }
}

/// Match a spectre tuple to its analyzed candidate.
fn candidate_for<'a>(
    tuple: &PolicyTuple,
    candidates: &'a [SpectreCandidate],
) -> Option<&'a SpectreCandidate> {
    candidates
        .iter()
        .find(|c| c.value == tuple.var && spectre_anchor(c) == tuple.loc)
        .or_else(|| candidates.iter().find(|c| c.value == tuple.var))
}

/// Harden `p` under `policies`. Returns the instrumented program and the
/// plan recording every insertion.
pub fn harden(
    p: &AsmProgram,
    policies: &PolicySet,
    ctx: &HardenContext,
    opts: HardenOptions,
) -> Result<(AsmProgram, InstrumentationPlan), InstrumentError> {
    let mut policies = policies.clone();
    if !policies.pending_spectre_sites.is_empty() {
        resolve_pending_spectre(&mut policies, &ctx.candidates)
            .map_err(InstrumentError::Analysis)?;
    }
    let liveness: BTreeMap<String, Liveness> = p
        .functions
        .iter()
        .map(|f| (f.name.clone(), Liveness::compute(f)))
        .collect();
    let mut plan = InstrumentationPlan::default();
    let mut alloc = ScratchAlloc::new(p, &liveness);

    // Mechanism A: landing pads on every indirect-call target.
    plan_bti(&mut plan, p, &ctx.class_members);

    // Grouping runs unconditionally to find dual-protected values; the mf
    // flag only decides whether a dual group fuses into one PA pair or
    // materializes as two serial pairs.
    let fused = fuse_modifiers(&policies.dfi, &policies.spectre);
    let dual_vars: Vec<(VarId, Loc)> = fused
        .iter()
        .filter(|f| f.is_dual())
        .map(|f| (f.var.clone(), f.loc.clone()))
        .collect();

    // Carrier reuse: map call sites to their carriers.
    let carriers: Option<Vec<CarrierChoice>> = if opts.cr {
        let site_targets: Vec<SiteTargets<'_>> = policies
            .cfi_sites
            .iter()
            .map(|s| SiteTargets {
                site: s,
                targets: policies
                    .target_tags
                    .iter()
                    .filter(|(_, t)| **t == s.tag)
                    .map(|(f, _)| f.clone())
                    .collect(),
            })
            .collect();
        Some(fuse_cfi_context(&site_targets, &policies.dfi, p)?)
    } else {
        None
    };

    // Mechanism B plans first so carried sinks are known before C runs.
    let cfi_outcome = plan_cfi(
        &mut plan,
        &mut alloc,
        p,
        &policies.cfi_sites,
        &policies.target_tags,
        carriers.as_deref(),
        &policies.dfi,
    )?;

    // Mechanisms C and E.
    let pairings = pair_dfi(&policies.dfi)?;
    let mut spectre_done: Vec<VarId> = Vec::new();
    for pairing in &pairings {
        let dual = dual_vars
            .iter()
            .find(|(v, l)| *v == pairing.var && *l == pairing.src.loc);
        if let Some((var, _)) = dual {
            let fused_policy = fused
                .iter()
                .find(|f| f.is_dual() && f.var == *var)
                .expect("dual var has fused policy");
            let spectre_tuple = policies
                .spectre
                .iter()
                .find(|t| t.var == *var)
                .expect("dual var has spectre tuple");
            let cand = candidate_for(spectre_tuple, &ctx.candidates)
                .ok_or_else(|| InstrumentError::NoProtectedValue(spectre_tuple.loc.clone()))?;
            if opts.mf {
                plan_fused_dual(&mut plan, &mut alloc, p, fused_policy, pairing, cand)?;
            } else {
                plan_serial_dual(&mut plan, &mut alloc, p, pairing, spectre_tuple, cand)?;
            }
            spectre_done.push(var.clone());
            continue;
        }
        let carried = cfi_outcome.carried_sink_vars.contains(&pairing.var);
        plan_dfi_pair(&mut plan, &mut alloc, pairing, carried)?;
    }
    for tuple in &policies.spectre {
        if spectre_done.contains(&tuple.var) {
            continue;
        }
        let cand = candidate_for(tuple, &ctx.candidates)
            .ok_or_else(|| InstrumentError::NoProtectedValue(tuple.loc.clone()))?;
        plan_spectre(&mut plan, &mut alloc, tuple, cand)?;
    }

    super::cfi::resolve_carrier_pairs(&mut plan, &policies.dfi, &cfi_outcome.pending_carrier_pairs);

    // Materialize, then enforce mechanism D ordering per function.
    let mut hardened = apply_plan(p, &plan);
    for f in &mut hardened.functions {
        *f = enforce_ordering(f)?;
    }
    Ok((hardened, plan))
}
