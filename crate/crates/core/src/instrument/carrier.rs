//! Carrier reuse: piggyback the CFI entry check onto an existing
//! PA-protected value instead of allocating fresh state.
//!
//! A register is a carrier for a call site when it holds a PA-signed value
//! at the site (a DFI source earlier in the caller), is an argument
//! register passed to the callee, and its protection is consumed inside
//! every potential callee (a DFI sink there with the same modifier). Ties
//! break toward the lowest register number. Without a carrier, non-leaf
//! callees protect the return path through the link register; leaves fall
//! back to the reserved general-purpose register x10.

use serde::{Deserialize, Serialize};

use crate::asm::{AsmProgram, Loc, Reg};
use crate::policy::{CfiSitePolicy, ModifierTag, PolicyTuple, TupleKind};

use super::InstrumentError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Carrier {
    /// An existing PA-protected argument register and its original modifier.
    Existing { reg: Reg, orig_mod: ModifierTag },
    /// Sign the link register at entry, verify at the epilogue.
    LinkRegister,
    /// Fresh protection through the reserved register x10.
    GeneralRegister,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarrierChoice {
    pub site: Loc,
    pub carrier: Carrier,
}

/// Targets a call site can reach: the member functions of its class.
pub struct SiteTargets<'a> {
    pub site: &'a CfiSitePolicy,
    pub targets: Vec<String>,
}

/// Choose a carrier per call site from the existing PA policies.
pub fn fuse_cfi_context(
    sites: &[SiteTargets<'_>],
    p_existing: &[PolicyTuple],
    p: &AsmProgram,
) -> Result<Vec<CarrierChoice>, InstrumentError> {
    let mut out = Vec::new();
    for st in sites {
        let site = &st.site.site;
        let caller = p
            .function(&site.func)
            .ok_or_else(|| InstrumentError::UnknownLoc(site.clone()))?;

        // Candidate carriers: DFI sources in the caller, before the site,
        // on argument registers, whose sink lives inside every target.
        let mut candidates: Vec<(Reg, ModifierTag)> = Vec::new();
        for src in p_existing
            .iter()
            .filter(|t| t.kind == TupleKind::DfiSource)
        {
            let reg = src.var.reg;
            let is_arg = matches!(reg, Reg::X(n) if n <= 7);
            if !is_arg || src.loc.func != site.func {
                continue;
            }
            if !loc_before(caller, &src.loc, site) {
                continue;
            }
            let consumed_in_all_targets = !st.targets.is_empty()
                && st.targets.iter().all(|target| {
                    p_existing.iter().any(|snk| {
                        snk.kind == TupleKind::DfiSink
                            && snk.var == src.var
                            && snk.tag == src.tag
                            && snk.loc.func == *target
                    })
                });
            if consumed_in_all_targets {
                candidates.push((reg, src.tag));
            }
        }
        candidates.sort();
        candidates.dedup();

        let carrier = if let Some((reg, orig_mod)) = candidates.first() {
            Carrier::Existing {
                reg: *reg,
                orig_mod: *orig_mod,
            }
        } else {
            let all_non_leaf = !st.targets.is_empty()
                && st
                    .targets
                    .iter()
                    .all(|t| p.function(t).map(|f| !f.is_leaf()).unwrap_or(false));
            if all_non_leaf {
                Carrier::LinkRegister
            } else {
                Carrier::GeneralRegister
            }
        };
        out.push(CarrierChoice {
            site: site.clone(),
            carrier,
        });
    }
    Ok(out)
}

/// Linear program-order comparison within one function.
fn loc_before(f: &crate::asm::AsmFunction, a: &Loc, b: &Loc) -> bool {
    let pos = |loc: &Loc| -> Option<usize> {
        f.locs().position(|(l, _)| l == *loc)
    };
    match (pos(a), pos(b)) {
        (Some(x), Some(y)) => x < y,
        _ => false,
    }
}
