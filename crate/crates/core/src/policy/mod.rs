//! Protection policies and the instrumentation plan.
//!
//! Policies are `(variable, location, modifier)` tuples for DFI, Spectre,
//! and CFI protection, produced by internal analysis or read from external
//! policy files, then merged and carried across the pipeline as the single
//! source of truth for what gets instrumented where.

mod plan;
mod set;
mod text;

pub use plan::{InstrumentationPlan, PlannedInsertion, Position};
pub use set::{
    CfiSitePolicy, MergeWarning, ModifierTag, PolicySet, PolicyTuple, TupleKind, VarId,
};
pub use text::{emit_policy, load_external_policy};

use thiserror::Error;

use crate::asm::Loc;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("policy line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unresolved location {0} in policy")]
    UnresolvedLoc(Loc),
    #[error("zero modifier tag at line {0}")]
    ZeroTag(usize),
}
