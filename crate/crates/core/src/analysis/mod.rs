//! Analysis passes: indirect-call sites and their target equivalence
//! classes, DOP-sensitive conditional branches, taint propagation, register
//! liveness, and deterministic modifier assignment.

mod absint;
mod callsites;
mod dop;
mod liveness;
mod modifiers;
mod taint;

pub use absint::{abstract_values, AbsVal};
pub use callsites::{
    compute_equivalence_classes, find_indirect_branches, parse_sidecar, CallSiteInfo, EquivClass,
    Sidecar, Signature,
};
pub use dop::{
    branch_variable_pair, derive_spectre_candidates, find_dop_branches, resolve_pending_spectre,
    spectre_anchor, trace_source, CondBranchInfo, SpectreCandidate,
};
pub use liveness::{reg_untouched_between, Liveness};
pub use modifiers::{assign_modifiers, DopPair, TagOverrides};
pub use taint::{compute_taint, TaintSummary};

use thiserror::Error;

use crate::asm::{AsmProgram, Loc};
use crate::policy::PolicySet;

/// Everything the analysis front half produces for one program.
pub struct AnalysisOutput {
    pub policies: PolicySet,
    pub classes: Vec<EquivClass>,
    pub sites: Vec<CallSiteInfo>,
    pub branches: Vec<CondBranchInfo>,
    pub candidates: Vec<SpectreCandidate>,
    pub taint: TaintSummary,
}

/// Run the full internal analysis: call sites and classes, taint, DOP
/// branches, spectre candidates, and seeded modifier assignment.
pub fn analyze_program(
    p: &AsmProgram,
    sidecar: &Sidecar,
    seed: u64,
    overrides: &TagOverrides,
) -> Result<AnalysisOutput, AnalysisError> {
    let mut sites = find_indirect_branches(p);
    let mut classes = compute_equivalence_classes(p, &mut sites, sidecar)?;
    let taint = compute_taint(p, &sidecar.input_regions);
    let branches = find_dop_branches(p, &taint);
    let candidates = derive_spectre_candidates(p, &taint, &branches);

    // One pair per variable: later comparisons reuse the verified value,
    // so only the first sink gets a verification.
    let mut dfi_pairs: Vec<DopPair> = Vec::new();
    for br in &branches {
        if let Some(f) = p.function(&br.site.func) {
            if let Some((var, sink)) = branch_variable_pair(br, f, &taint) {
                if !dfi_pairs.iter().any(|pr| pr.var == var) {
                    dfi_pairs.push(DopPair { var, sink });
                }
            }
        }
    }

    let policies = assign_modifiers(
        &mut classes,
        &sites,
        &dfi_pairs,
        &candidates,
        seed,
        overrides,
    )?;
    Ok(AnalysisOutput {
        policies,
        classes,
        sites,
        branches,
        candidates,
        taint,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("sidecar line {line}: {reason}")]
    SidecarParse { line: usize, reason: String },
    #[error("address-taken function '{0}' has no declared signature")]
    MissingSignature(String),
    #[error("cannot determine target class for call site {0}")]
    UnresolvedSiteClass(Loc),
    #[error("call-site targets at {0} span multiple signature classes")]
    AmbiguousSiteClass(Loc),
    #[error("modifier tag space exhausted ({0} tags requested)")]
    TagSpaceExhausted(usize),
    #[error("spectre policy at {0} does not match any analyzed conditional branch")]
    UnmatchedSpectreSite(Loc),
}
