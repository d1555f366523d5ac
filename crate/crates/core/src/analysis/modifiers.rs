//! Deterministic PA modifier assignment.
//!
//! Every equivalence class, DFI pair, and Spectre site receives a unique
//! nonzero 16-bit tag, as a pure function of the seed and a stable ordering
//! of sites. An override map pins chosen tags for reproducible fixtures.

use std::collections::{BTreeMap, BTreeSet};

use crate::asm::Loc;
use crate::policy::{CfiSitePolicy, ModifierTag, PolicySet, PolicyTuple, TupleKind, VarId};

use super::callsites::{CallSiteInfo, EquivClass};
use super::dop::{spectre_anchor, SpectreCandidate};
use super::AnalysisError;

/// An internal DFI protection: sign `var` after its definition, verify it
/// before `sink`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DopPair {
    pub var: VarId,
    pub sink: Loc,
}

/// Pin map: `class:<first-member>`, `dfi:<var>`, `spectre:<var>` keys.
pub type TagOverrides = BTreeMap<String, u16>;

fn splitmix64(z: &mut u64) -> u64 {
    *z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut x = *z;
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

struct TagAllocator {
    state: u64,
    used: BTreeSet<u16>,
    requested: usize,
}

impl TagAllocator {
    fn new(seed: u64) -> TagAllocator {
        TagAllocator {
            state: seed,
            used: BTreeSet::new(),
            requested: 0,
        }
    }

    fn reserve(&mut self, tag: u16) {
        self.used.insert(tag);
    }

    fn next(&mut self, pin: Option<u16>) -> Result<ModifierTag, AnalysisError> {
        self.requested += 1;
        if self.requested > 0xffff {
            return Err(AnalysisError::TagSpaceExhausted(self.requested));
        }
        if let Some(p) = pin {
            self.used.insert(p);
            return Ok(ModifierTag(p));
        }
        loop {
            let candidate = (splitmix64(&mut self.state) & 0xffff) as u16;
            if candidate != 0 && !self.used.contains(&candidate) {
                self.used.insert(candidate);
                return Ok(ModifierTag(candidate));
            }
        }
    }
}

/// Assign tags and build the internal policy set. Classes are updated in
/// place with their tags.
pub fn assign_modifiers(
    classes: &mut [EquivClass],
    sites: &[CallSiteInfo],
    dfi_pairs: &[DopPair],
    spectre: &[SpectreCandidate],
    seed: u64,
    overrides: &TagOverrides,
) -> Result<PolicySet, AnalysisError> {
    let mut alloc = TagAllocator::new(seed);
    for pin in overrides.values() {
        alloc.reserve(*pin);
    }

    let mut set = PolicySet::default();

    // Classes first, ordered by first member name.
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by_key(|i| classes[*i].members.first().cloned().unwrap_or_default());
    for idx in order {
        let key = format!(
            "class:{}",
            classes[idx].members.first().cloned().unwrap_or_default()
        );
        let tag = alloc.next(overrides.get(&key).copied())?;
        classes[idx].tag = tag;
        for m in &classes[idx].members {
            set.target_tags.insert(m.clone(), tag);
        }
    }
    for site in sites {
        let Some(class_id) = site.target_class else {
            continue;
        };
        let tag = classes
            .iter()
            .find(|c| c.id == class_id)
            .map(|c| c.tag)
            .unwrap_or_default();
        set.cfi_sites.push(CfiSitePolicy {
            site: site.site.clone(),
            tag,
        });
    }

    // DFI pairs, ordered by (var, sink).
    let mut pairs: Vec<&DopPair> = dfi_pairs.iter().collect();
    pairs.sort();
    for pair in pairs {
        let key = format!("dfi:{}", pair.var);
        let tag = alloc.next(overrides.get(&key).copied())?;
        set.dfi.push(PolicyTuple {
            var: pair.var.clone(),
            loc: pair.var.def_loc.clone(),
            tag,
            kind: TupleKind::DfiSource,
        });
        set.dfi.push(PolicyTuple {
            var: pair.var.clone(),
            loc: pair.sink.clone(),
            tag,
            kind: TupleKind::DfiSink,
        });
    }

    // Spectre candidates, ordered by (branch site, guarded side).
    let mut cands: Vec<&SpectreCandidate> = spectre.iter().collect();
    cands.sort_by_key(|c| (c.branch.site.clone(), c.guarded_is_taken));
    for c in cands {
        let key = format!("spectre:{}", c.value);
        let tag = alloc.next(overrides.get(&key).copied())?;
        set.spectre.push(PolicyTuple {
            var: c.value.clone(),
            loc: spectre_anchor(c),
            tag,
            kind: TupleKind::Spectre,
        });
    }

    set.sort();
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::Reg;

    fn class(id: usize, members: &[&str]) -> EquivClass {
        EquivClass {
            id,
            members: members.iter().map(|s| s.to_string()).collect(),
            signature: super::super::callsites::Signature {
                arity: 1,
                ret: false,
            },
            tag: ModifierTag(0),
        }
    }

    #[test]
    fn same_seed_same_tags() {
        let mut c1 = vec![class(0, &["f"])];
        let mut c2 = vec![class(0, &["f"])];
        let s1 = assign_modifiers(&mut c1, &[], &[], &[], 42, &TagOverrides::new()).unwrap();
        let s2 = assign_modifiers(&mut c2, &[], &[], &[], 42, &TagOverrides::new()).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(c1[0].tag, c2[0].tag);
        assert!(!c1[0].tag.is_poison());
    }

    #[test]
    fn three_classes_get_distinct_nonzero_tags() {
        let mut classes = vec![class(0, &["a"]), class(1, &["b"]), class(2, &["c"])];
        assign_modifiers(&mut classes, &[], &[], &[], 7, &TagOverrides::new()).unwrap();
        let tags: BTreeSet<u16> = classes.iter().map(|c| c.tag.0).collect();
        assert_eq!(tags.len(), 3);
        assert!(!tags.contains(&0));
    }

    #[test]
    fn override_pins_class_tag() {
        let mut classes = vec![class(0, &["handler_a"])];
        let mut overrides = TagOverrides::new();
        overrides.insert("class:handler_a".to_string(), 0x9c2);
        let set =
            assign_modifiers(&mut classes, &[], &[], &[], 999, &overrides).unwrap();
        assert_eq!(classes[0].tag, ModifierTag(0x9c2));
        assert_eq!(set.target_tags["handler_a"], ModifierTag(0x9c2));
    }

    #[test]
    fn tag_space_exhaustion_is_reported() {
        // Each pair requests two tuples sharing one tag; the allocator
        // counts one request per pair-tag plus one per class.
        let pairs: Vec<DopPair> = (0..0x1_0000u32)
            .map(|i| DopPair {
                var: VarId::new(Reg::X((i % 29) as u8), Loc::new("f", ".b", i as usize)),
                sink: Loc::new("f", ".b", i as usize + 1),
            })
            .collect();
        let err =
            assign_modifiers(&mut [], &[], &pairs, &[], 1, &TagOverrides::new()).unwrap_err();
        assert!(matches!(err, AnalysisError::TagSpaceExhausted(_)));
    }

    #[test]
    fn dfi_pair_emits_source_and_sink() {
        let pair = DopPair {
            var: VarId::new(Reg::X(9), Loc::new("f", ".bb2", 0)),
            sink: Loc::new("f", ".bb3", 1),
        };
        let set =
            assign_modifiers(&mut [], &[], &[pair], &[], 3, &TagOverrides::new()).unwrap();
        assert_eq!(set.dfi.len(), 2);
        assert_eq!(set.dfi[0].tag, set.dfi[1].tag);
        let kinds: Vec<TupleKind> = set.dfi.iter().map(|t| t.kind).collect();
        assert!(kinds.contains(&TupleKind::DfiSource));
        assert!(kinds.contains(&TupleKind::DfiSink));
    }
}
