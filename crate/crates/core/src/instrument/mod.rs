//! The five defense mechanisms, their two cost optimizations, and the
//! composed hardening pipeline.

mod builder;
mod carrier;
mod cfi;
mod fusion;
mod harden;
mod ordering;
mod strip;

pub use builder::apply_plan;
pub use carrier::{fuse_cfi_context, Carrier, CarrierChoice, SiteTargets};
pub use fusion::{fuse_modifiers, FusedPolicy};
pub use harden::{harden, HardenContext, HardenOptions};
pub use ordering::{enforce_ordering, ordering_violations};
pub use strip::strip_spectre;

use thiserror::Error;

use crate::asm::{AsmProgram, Loc};
use crate::policy::{InstrumentationPlan, PolicySet, VarId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("no scratch register available at {0}")]
    ScratchUnavailable(Loc),
    #[error("DFI source for {0} has no sink")]
    NoSinkForSource(VarId),
    #[error("DFI sink for {0} has no source")]
    NoSourceForSink(VarId),
    #[error("variable {0} has more than one DFI source")]
    DuplicateSource(VarId),
    #[error("spectre policy at {0} names no protected value")]
    NoProtectedValue(Loc),
    #[error("conflicting carrier choices for target of site {0}")]
    CarrierConflict(Loc),
    #[error("authentication ordering unsatisfiable at {0}")]
    OrderingUnsatisfiable(Loc),
    #[error("fused protection for {0} crosses an incompatible use")]
    UnsupportedFusionShape(VarId),
    #[error("unknown location {0}")]
    UnknownLoc(Loc),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
}

/// Mechanism A alone: BTI landing pads for every class member.
pub fn insert_bti(p: &AsmProgram, members: &[String]) -> AsmProgram {
    let mut plan = InstrumentationPlan::default();
    builder::plan_bti(&mut plan, p, members);
    apply_plan(p, &plan)
}

/// Mechanism C alone, with no fusion or carrier interplay.
pub fn instrument_dfi(
    p: &AsmProgram,
    s_dfi: &[crate::policy::PolicyTuple],
) -> Result<AsmProgram, InstrumentError> {
    let liveness = per_function_liveness(p);
    let mut plan = InstrumentationPlan::default();
    let mut alloc = builder::ScratchAlloc::new(p, &liveness);
    for pairing in builder::pair_dfi(s_dfi)? {
        builder::plan_dfi_pair(&mut plan, &mut alloc, &pairing, false)?;
    }
    Ok(apply_plan(p, &plan))
}

/// Mechanism E alone for the given spectre tuples and their candidates.
pub fn instrument_spectre_v1(
    p: &AsmProgram,
    candidates: &[crate::analysis::SpectreCandidate],
    s_spectre: &[crate::policy::PolicyTuple],
) -> Result<AsmProgram, InstrumentError> {
    let liveness = per_function_liveness(p);
    let mut plan = InstrumentationPlan::default();
    let mut alloc = builder::ScratchAlloc::new(p, &liveness);
    for tuple in s_spectre {
        let cand = candidates
            .iter()
            .find(|c| c.value == tuple.var)
            .ok_or_else(|| InstrumentError::NoProtectedValue(tuple.loc.clone()))?;
        builder::plan_spectre(&mut plan, &mut alloc, tuple, cand)?;
    }
    Ok(apply_plan(p, &plan))
}

/// Mechanism B alone.
pub fn instrument_cfi(
    p: &AsmProgram,
    policies: &PolicySet,
    carriers: Option<&[CarrierChoice]>,
) -> Result<AsmProgram, InstrumentError> {
    let liveness = per_function_liveness(p);
    let mut plan = InstrumentationPlan::default();
    let mut alloc = builder::ScratchAlloc::new(p, &liveness);
    cfi::plan_cfi(
        &mut plan,
        &mut alloc,
        p,
        &policies.cfi_sites,
        &policies.target_tags,
        carriers,
        &policies.dfi,
    )?;
    Ok(apply_plan(p, &plan))
}

fn per_function_liveness(
    p: &AsmProgram,
) -> std::collections::BTreeMap<String, crate::analysis::Liveness> {
    p.functions
        .iter()
        .map(|f| (f.name.clone(), crate::analysis::Liveness::compute(f)))
        .collect()
}
