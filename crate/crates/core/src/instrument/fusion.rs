//! Multi-threat modifier fusion.
//!
//! DFI and Spectre tuples that protect the same `(variable, location)` are
//! grouped, their modifiers XOR-combined (zero for an absent side), and
//! exactly one PA instruction is generated per group downstream.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::asm::Loc;
use crate::policy::{ModifierTag, PolicyTuple, TupleKind, VarId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedPolicy {
    pub var: VarId,
    pub loc: Loc,
    pub mod_fused: ModifierTag,
    /// Ids of the contributing tuples.
    pub sources: Vec<String>,
    /// Which sides contributed.
    pub has_dfi: bool,
    pub has_spectre: bool,
}

impl FusedPolicy {
    pub fn is_dual(&self) -> bool {
        self.has_dfi && self.has_spectre
    }
}

/// Group `(v, loc)` keys across both policy sets and XOR the modifiers.
pub fn fuse_modifiers(s_dfi: &[PolicyTuple], s_spectre: &[PolicyTuple]) -> Vec<FusedPolicy> {
    let mut groups: BTreeMap<(VarId, Loc), Vec<&PolicyTuple>> = BTreeMap::new();
    for t in s_dfi
        .iter()
        .filter(|t| t.kind == TupleKind::DfiSource)
        .chain(s_spectre.iter())
    {
        groups
            .entry((t.var.clone(), t.loc.clone()))
            .or_default()
            .push(t);
    }

    let mut out = Vec::new();
    for ((var, loc), tuples) in groups {
        let mod_dfi = tuples
            .iter()
            .find(|t| t.kind == TupleKind::DfiSource)
            .map(|t| t.tag.0)
            .unwrap_or(0);
        let mod_spectre = tuples
            .iter()
            .find(|t| t.kind == TupleKind::Spectre)
            .map(|t| t.tag.0)
            .unwrap_or(0);
        out.push(FusedPolicy {
            var,
            loc,
            mod_fused: ModifierTag(mod_dfi ^ mod_spectre),
            sources: tuples.iter().map(|t| t.id()).collect(),
            has_dfi: mod_dfi != 0,
            has_spectre: mod_spectre != 0,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::Reg;

    fn tuple(loc: Loc, tag: u16, kind: TupleKind) -> PolicyTuple {
        PolicyTuple {
            var: VarId::new(Reg::X(9), Loc::new("f", ".bb2", 0)),
            loc,
            tag: ModifierTag(tag),
            kind,
        }
    }

    #[test]
    fn dfi_only_keeps_modifier() {
        let dfi = vec![tuple(Loc::new("f", ".bb2", 0), 0x9c2, TupleKind::DfiSource)];
        let fused = fuse_modifiers(&dfi, &[]);
        assert_eq!(fused.len(), 1);
        assert_eq!(fused[0].mod_fused, ModifierTag(0x9c2));
        assert!(!fused[0].is_dual());
    }

    #[test]
    fn dual_protection_xors_modifiers() {
        let loc = Loc::new("f", ".bb2", 0);
        let dfi = vec![tuple(loc.clone(), 0x9c2, TupleKind::DfiSource)];
        let spectre = vec![tuple(loc, 0x135, TupleKind::Spectre)];
        let fused = fuse_modifiers(&dfi, &spectre);
        assert_eq!(fused.len(), 1);
        assert_eq!(fused[0].mod_fused, ModifierTag(0x8f7));
        assert!(fused[0].is_dual());
        assert_eq!(fused[0].sources.len(), 2);
    }

    #[test]
    fn four_tuples_three_keys_three_groups() {
        let l1 = Loc::new("f", ".bb2", 0);
        let l2 = Loc::new("f", ".bb2", 1);
        let l3 = Loc::new("f", ".bb4", 0);
        let dfi = vec![
            tuple(l1.clone(), 0x10, TupleKind::DfiSource),
            tuple(l2, 0x20, TupleKind::DfiSource),
        ];
        let spectre = vec![
            tuple(l1, 0x30, TupleKind::Spectre),
            tuple(l3, 0x40, TupleKind::Spectre),
        ];
        let fused = fuse_modifiers(&dfi, &spectre);
        // Brute-force oracle: group keys by hand.
        assert_eq!(fused.len(), 3);
        let dual: Vec<&FusedPolicy> = fused.iter().filter(|f| f.is_dual()).collect();
        assert_eq!(dual.len(), 1);
        assert_eq!(dual[0].mod_fused, ModifierTag(0x10 ^ 0x30));
    }
}
