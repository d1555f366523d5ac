//! Policy tuples and set operations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::asm::{AsmProgram, Loc, Reg};

use super::PolicyError;

/// A PA modifier tag. Zero is the poison sentinel selected by
/// `csel ..., xzr` and never assigned as a real tag.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct ModifierTag(pub u16);

impl ModifierTag {
    pub fn is_poison(&self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ModifierTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// A protected variable: a register at its defining location.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId {
    pub reg: Reg,
    pub def_loc: Loc,
}

impl VarId {
    pub fn new(reg: Reg, def_loc: Loc) -> VarId {
        VarId { reg, def_loc }
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.reg, self.def_loc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TupleKind {
    DfiSource,
    DfiSink,
    Spectre,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PolicyTuple {
    pub var: VarId,
    pub loc: Loc,
    pub tag: ModifierTag,
    pub kind: TupleKind,
}

impl PolicyTuple {
    /// Stable identifier used to trace plan insertions back to policies.
    pub fn id(&self) -> String {
        let kind = match self.kind {
            TupleKind::DfiSource => "dfi-src",
            TupleKind::DfiSink => "dfi-sink",
            TupleKind::Spectre => "spectre",
        };
        format!("{kind}:{}:{}", self.var, self.loc)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CfiSitePolicy {
    pub site: Loc,
    pub tag: ModifierTag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeWarning {
    pub message: String,
}

/// The full protection policy for a program.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySet {
    /// DFI source/sink tuples.
    pub dfi: Vec<PolicyTuple>,
    /// Spectre tuples (kind `Spectre`).
    pub spectre: Vec<PolicyTuple>,
    /// Indirect call sites and the tag each must pass.
    pub cfi_sites: Vec<CfiSitePolicy>,
    /// Expected tag at each indirect-call-target function.
    pub target_tags: BTreeMap<String, ModifierTag>,
    /// Spectre policy lines whose variable is not yet derived; they name
    /// the conditional-branch site and are resolved against the program's
    /// DOP analysis before merging.
    pub pending_spectre_sites: Vec<(Loc, ModifierTag)>,
}

impl PolicySet {
    pub fn is_empty(&self) -> bool {
        self.dfi.is_empty()
            && self.spectre.is_empty()
            && self.cfi_sites.is_empty()
            && self.target_tags.is_empty()
            && self.pending_spectre_sites.is_empty()
    }

    pub fn sort(&mut self) {
        self.dfi.sort();
        self.spectre.sort();
        self.cfi_sites.sort();
        self.pending_spectre_sites.sort();
    }

    /// All tags in use, for collision re-tagging.
    pub fn used_tags(&self) -> Vec<ModifierTag> {
        let mut tags: Vec<ModifierTag> = self
            .dfi
            .iter()
            .chain(self.spectre.iter())
            .map(|t| t.tag)
            .chain(self.cfi_sites.iter().map(|c| c.tag))
            .chain(self.target_tags.values().copied())
            .collect();
        tags.sort();
        tags.dedup();
        tags
    }

    /// Check that every referenced location names an original instruction.
    pub fn validate_locs(&self, p: &AsmProgram) -> Result<(), PolicyError> {
        let check = |loc: &Loc| -> Result<(), PolicyError> {
            if p.instr_at(loc).is_none() {
                Err(PolicyError::UnresolvedLoc(loc.clone()))
            } else {
                Ok(())
            }
        };
        for t in self.dfi.iter().chain(self.spectre.iter()) {
            check(&t.loc)?;
            check(&t.var.def_loc)?;
        }
        for c in &self.cfi_sites {
            check(&c.site)?;
        }
        for (loc, _) in &self.pending_spectre_sites {
            check(loc)?;
        }
        for func in self.target_tags.keys() {
            if p.function(func).is_none() {
                return Err(PolicyError::UnresolvedLoc(Loc::new(func.clone(), "", 0)));
            }
        }
        Ok(())
    }

    /// Union with external policies. On a conflict (same variable, location,
    /// and kind with a different modifier) the external tuple wins and a
    /// warning records the override. Internal tags whose value collides
    /// with an external tag on a different protection are re-tagged to the
    /// next free value so tag uniqueness survives the merge.
    pub fn merge(internal: &PolicySet, external: &PolicySet) -> (PolicySet, Vec<MergeWarning>) {
        let mut warnings = Vec::new();
        let internal = &Self::retag_collisions(internal, external, &mut warnings);
        let mut out = PolicySet::default();

        let mut merge_tuples = |ours: &[PolicyTuple], theirs: &[PolicyTuple]| -> Vec<PolicyTuple> {
            let mut merged: Vec<PolicyTuple> = theirs.to_vec();
            for t in ours {
                match merged
                    .iter()
                    .find(|e| e.var == t.var && e.loc == t.loc && e.kind == t.kind)
                {
                    Some(existing) if existing.tag != t.tag => {
                        warnings.push(MergeWarning {
                            message: format!(
                                "policy conflict at {} {}: external modifier {} overrides internal {}",
                                t.var, t.loc, existing.tag, t.tag
                            ),
                        });
                    }
                    Some(_) => {}
                    None => merged.push(t.clone()),
                }
            }
            merged.sort();
            merged.dedup();
            merged
        };

        out.dfi = merge_tuples(&internal.dfi, &external.dfi);
        out.spectre = merge_tuples(&internal.spectre, &external.spectre);

        let mut sites: Vec<CfiSitePolicy> = external.cfi_sites.clone();
        for s in &internal.cfi_sites {
            match sites.iter().find(|e| e.site == s.site) {
                Some(existing) if existing.tag != s.tag => warnings.push(MergeWarning {
                    message: format!(
                        "cfi conflict at {}: external tag {} overrides internal {}",
                        s.site, existing.tag, s.tag
                    ),
                }),
                Some(_) => {}
                None => sites.push(s.clone()),
            }
        }
        sites.sort();
        sites.dedup();
        out.cfi_sites = sites;

        out.target_tags = external.target_tags.clone();
        for (func, tag) in &internal.target_tags {
            match out.target_tags.get(func) {
                Some(existing) if existing != tag => warnings.push(MergeWarning {
                    message: format!(
                        "cfitarget conflict for {func}: external tag {existing} overrides internal {tag}"
                    ),
                }),
                Some(_) => {}
                None => {
                    out.target_tags.insert(func.clone(), *tag);
                }
            }
        }

        let mut pend = internal.pending_spectre_sites.clone();
        pend.extend(external.pending_spectre_sites.iter().cloned());
        pend.sort();
        pend.dedup();
        out.pending_spectre_sites = pend;

        out.sort();
        (out, warnings)
    }

    /// Remap internal tag values that collide with external ones onto the
    /// next free value, consistently across every use of the old value
    /// (class tags link sites and targets by value).
    fn retag_collisions(
        internal: &PolicySet,
        external: &PolicySet,
        warnings: &mut Vec<MergeWarning>,
    ) -> PolicySet {
        let external_tags = external.used_tags();
        if external_tags.is_empty() {
            return internal.clone();
        }
        let mut taken: Vec<u16> = external_tags.iter().map(|t| t.0).collect();
        taken.extend(internal.used_tags().iter().map(|t| t.0));

        // A collision only exists when the value appears on both sides for
        // different protections; identical tuples deduplicate instead.
        let mut remap: BTreeMap<u16, u16> = BTreeMap::new();
        let mut remap_value = |old: u16, taken: &mut Vec<u16>| -> u16 {
            if let Some(new) = remap.get(&old) {
                return *new;
            }
            let mut candidate = old;
            loop {
                candidate = candidate.wrapping_add(1);
                if candidate != 0 && !taken.contains(&candidate) {
                    break;
                }
            }
            taken.push(candidate);
            remap.insert(old, candidate);
            candidate
        };

        let mut out = internal.clone();
        for t in out.dfi.iter_mut().chain(out.spectre.iter_mut()) {
            let same_tuple_external = external
                .dfi
                .iter()
                .chain(external.spectre.iter())
                .any(|e| e.var == t.var && e.loc == t.loc && e.kind == t.kind);
            if !same_tuple_external && external_tags.contains(&t.tag) {
                let new = remap_value(t.tag.0, &mut taken);
                warnings.push(MergeWarning {
                    message: format!(
                        "internal tag {} collides with an external tag; re-tagged to {:#x}",
                        t.tag, new
                    ),
                });
                t.tag = ModifierTag(new);
            }
        }
        let colliding_class_tags: Vec<ModifierTag> = out
            .cfi_sites
            .iter()
            .map(|c| c.tag)
            .chain(out.target_tags.values().copied())
            .filter(|t| {
                external_tags.contains(t)
                    && !external.cfi_sites.iter().any(|e| e.tag == *t)
                    && !external.target_tags.values().any(|e| e == t)
            })
            .collect();
        for old in colliding_class_tags {
            let new = remap_value(old.0, &mut taken);
            for c in out.cfi_sites.iter_mut().filter(|c| c.tag == old) {
                c.tag = ModifierTag(new);
            }
            for t in out.target_tags.values_mut().filter(|t| **t == old) {
                *t = ModifierTag(new);
            }
            warnings.push(MergeWarning {
                message: format!(
                    "internal class tag {old} collides with an external tag; re-tagged to {new:#x}"
                ),
            });
        }
        out
    }
}
