//! Backward register liveness over the CFG, used to find dead scratch
//! registers at insertion points and live carriers at call sites.

use std::collections::{BTreeMap, BTreeSet};

use crate::asm::{build_cfg, AsmFunction, Loc, Reg};

#[derive(Debug, Clone)]
pub struct Liveness {
    /// Registers live immediately before each original instruction.
    pub live_before: BTreeMap<Loc, BTreeSet<Reg>>,
}

impl Liveness {
    pub fn compute(f: &AsmFunction) -> Liveness {
        let cfg = build_cfg(f);
        let mut live_out: BTreeMap<String, BTreeSet<Reg>> = BTreeMap::new();
        for b in &f.blocks {
            live_out.insert(b.label.clone(), BTreeSet::new());
        }

        // Unresolved (indirect) successors are treated as everything-live.
        let all_regs: BTreeSet<Reg> = (0..=30).map(Reg::X).chain([Reg::Sp]).collect();

        let live_in_of = |f: &AsmFunction,
                          label: &str,
                          live_out: &BTreeMap<String, BTreeSet<Reg>>|
         -> BTreeSet<Reg> {
            let b = f.block(label).expect("block exists");
            let mut live = live_out.get(label).cloned().unwrap_or_default();
            for i in b.instrs.iter().rev().filter(|i| i.meta.is_none()) {
                for d in i.defs() {
                    live.remove(&d);
                }
                for u in i.uses() {
                    live.insert(u);
                }
            }
            live
        };

        for _ in 0..(f.blocks.len() + 2) {
            let mut changed = false;
            for b in f.blocks.iter().rev() {
                let mut out = BTreeSet::new();
                let succs = cfg.successors(&b.label);
                for e in succs {
                    match &e.target {
                        Some(t) => out.extend(live_in_of(f, t, &live_out)),
                        None => out.extend(all_regs.iter().copied()),
                    }
                }
                if live_out.get(&b.label) != Some(&out) {
                    live_out.insert(b.label.clone(), out);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let mut live_before = BTreeMap::new();
        for b in &f.blocks {
            let mut live = live_out.get(&b.label).cloned().unwrap_or_default();
            let originals: Vec<(usize, &crate::asm::Instr)> = b
                .instrs
                .iter()
                .filter(|i| i.meta.is_none())
                .enumerate()
                .collect();
            for (idx, i) in originals.into_iter().rev() {
                for d in i.defs() {
                    live.remove(&d);
                }
                for u in i.uses() {
                    live.insert(u);
                }
                live_before.insert(
                    Loc::new(f.name.clone(), b.label.clone(), idx),
                    live.clone(),
                );
            }
        }
        Liveness { live_before }
    }

    /// True when `reg` is not live immediately before `loc`.
    pub fn dead_before(&self, loc: &Loc, reg: Reg) -> bool {
        self.live_before
            .get(loc)
            .map(|s| !s.contains(&reg))
            .unwrap_or(true)
    }
}

/// True when no original instruction strictly between `from` and `to` (in
/// linear program order within the function) reads or writes `reg`.
/// Conservative for diamond shapes; the scratch allocator relies on it.
pub fn reg_untouched_between(f: &AsmFunction, reg: Reg, from: &Loc, to: &Loc) -> bool {
    let mut inside = false;
    for (loc, i) in f.locs() {
        if loc == *to {
            return true;
        }
        if inside && (i.uses().contains(&reg) || i.defs().contains(&reg)) {
            return false;
        }
        if loc == *from {
            inside = true;
        }
    }
    true
}
