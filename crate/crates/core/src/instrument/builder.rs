//! Insertion planning and application.
//!
//! Every mechanism plans insertions against pre-hardening locations; the
//! applier materializes them in one pass so indices never shift under the
//! planners. Scratch registers come from a fixed pool (x11 preferred, x10
//! reserved for the CFI fallback carrier) and must be dead and untouched
//! across their span; there is no spill path in this subset, so exhaustion
//! is an error.

use std::collections::BTreeMap;

use crate::analysis::{Liveness, SpectreCandidate};
use crate::asm::{
    AsmFunction, AsmProgram, BtiMode, Cond, Instr, Loc, Mechanism, Mnemonic, Operand, Reg,
};
use crate::policy::{
    InstrumentationPlan, PolicyTuple, Position, TupleKind, VarId,
};

use super::fusion::FusedPolicy;
use super::InstrumentError;

// x11 first (the preferred modifier register), x10 reserved for the CFI
// fallback carrier; the callee-saved tail serves spans that cross calls.
pub(crate) const SCRATCH_POOL: [Reg; 8] = [
    Reg::X(11),
    Reg::X(12),
    Reg::X(13),
    Reg::X(14),
    Reg::X(15),
    Reg::X(26),
    Reg::X(27),
    Reg::X(28),
];
pub(crate) const TAG_REG: Reg = Reg::X(11);
pub(crate) const FALLBACK_CARRIER: Reg = Reg::X(10);

/// Tracks scratch claims per function as linear-index ranges so that
/// overlapping spans never share a register.
pub(crate) struct ScratchAlloc<'a> {
    program: &'a AsmProgram,
    liveness: &'a BTreeMap<String, Liveness>,
    /// (function, reg, from, to) claims over linear instruction indices.
    claims: Vec<(String, Reg, usize, usize)>,
}

impl<'a> ScratchAlloc<'a> {
    pub fn new(program: &'a AsmProgram, liveness: &'a BTreeMap<String, Liveness>) -> Self {
        ScratchAlloc {
            program,
            liveness,
            claims: Vec::new(),
        }
    }

    fn linear_index(&self, f: &AsmFunction, loc: &Loc) -> Option<usize> {
        f.locs().position(|(l, _)| l == *loc)
    }

    /// Claim a register dead before `from` and untouched through `to`.
    pub fn claim(
        &mut self,
        func: &str,
        from: &Loc,
        to: &Loc,
        exclude: &[Reg],
    ) -> Result<Reg, InstrumentError> {
        let f = self
            .program
            .function(func)
            .ok_or_else(|| InstrumentError::UnknownLoc(from.clone()))?;
        let live = self
            .liveness
            .get(func)
            .ok_or_else(|| InstrumentError::UnknownLoc(from.clone()))?;
        let a = self
            .linear_index(f, from)
            .ok_or_else(|| InstrumentError::UnknownLoc(from.clone()))?;
        let b = self
            .linear_index(f, to)
            .ok_or_else(|| InstrumentError::UnknownLoc(to.clone()))?
            .max(a);
        for reg in SCRATCH_POOL {
            if exclude.contains(&reg) {
                continue;
            }
            if !live.dead_before(from, reg) {
                continue;
            }
            if !crate::analysis::reg_untouched_between(f, reg, from, to) && a != b {
                continue;
            }
            let overlaps = self.claims.iter().any(|(cf, cr, ca, cb)| {
                cf == func && *cr == reg && a <= *cb && *ca <= b
            });
            if overlaps {
                continue;
            }
            self.claims.push((func.to_string(), reg, a, b));
            return Ok(reg);
        }
        Err(InstrumentError::ScratchUnavailable(from.clone()))
    }
}

pub(crate) fn mov_imm(dst: Reg, imm: u16, mech: Mechanism) -> Instr {
    Instr::tagged(
        Mnemonic::Mov,
        vec![Operand::Reg(dst), Operand::Imm(imm as u64)],
        mech,
    )
}

pub(crate) fn pac(mnemonic: Mnemonic, value: Reg, modifier: Reg, mech: Mechanism) -> Instr {
    Instr::tagged(
        mnemonic,
        vec![Operand::Reg(value), Operand::Reg(modifier)],
        mech,
    )
}

pub(crate) fn csel(dst: Reg, on_true: Reg, on_false: Reg, cond: Cond, mech: Mechanism) -> Instr {
    Instr::tagged(
        Mnemonic::Csel,
        vec![
            Operand::Reg(dst),
            Operand::Reg(on_true),
            Operand::Reg(on_false),
            Operand::Cond(cond),
        ],
        mech,
    )
}

pub(crate) fn cmp_imm(reg: Reg, imm: u16, mech: Mechanism) -> Instr {
    Instr::tagged(
        Mnemonic::Cmp,
        vec![Operand::Reg(reg), Operand::Imm(imm as u64)],
        mech,
    )
}

/// Materialize a plan: before-insertions of each original instruction run
/// in seq order, then the instruction, then its after-insertions. An
/// `After` anchor on a terminator lands at the head of the next block.
pub fn apply_plan(p: &AsmProgram, plan: &InstrumentationPlan) -> AsmProgram {
    let mut out = p.clone();
    for f in &mut out.functions {
        let nblocks = f.blocks.len();
        for (bi, b) in f.blocks.iter_mut().enumerate() {
            let mut rebuilt: Vec<Instr> = Vec::with_capacity(b.instrs.len());
            let mut inserts: BTreeMap<(usize, Position, usize, usize), &crate::policy::PlannedInsertion> =
                BTreeMap::new();
            for ins in plan
                .insertions
                .iter()
                .filter(|i| i.anchor.func == f.name && i.anchor.block == b.label)
            {
                inserts.insert((ins.anchor.index, ins.position, ins.seq, ins.id), ins);
            }
            let originals: Vec<Instr> = b.instrs.clone();
            let last_original = originals
                .iter()
                .filter(|i| i.meta.is_none())
                .count()
                .saturating_sub(1);
            let mut orig_idx = 0usize;
            for i in originals {
                if i.meta.is_some() {
                    rebuilt.push(i);
                    continue;
                }
                let is_terminator = i.is_control_transfer() && orig_idx == last_original;
                for (_, ins) in inserts.range(
                    (orig_idx, Position::Before, 0, 0)
                        ..=(orig_idx, Position::Before, usize::MAX, usize::MAX),
                ) {
                    rebuilt.push(ins.instr.clone());
                }
                rebuilt.push(i);
                if !is_terminator {
                    for (_, ins) in inserts.range(
                        (orig_idx, Position::After, 0, 0)
                            ..=(orig_idx, Position::After, usize::MAX, usize::MAX),
                    ) {
                        rebuilt.push(ins.instr.clone());
                    }
                }
                orig_idx += 1;
            }
            // After-insertions on a block terminator flow to the next block's
            // head; collect them for the pass below.
            let _ = (bi, nblocks);
            b.instrs = rebuilt;
        }
        // Second pass: terminator after-insertions land at the next block.
        let mut pending: Vec<(usize, Vec<Instr>)> = Vec::new();
        for (bi, b) in f.blocks.iter().enumerate() {
            let last = match b.instrs.iter().filter(|i| i.meta.is_none()).count() {
                0 => continue,
                n => n - 1,
            };
            let has_terminator = b
                .instrs
                .iter().rfind(|i| i.meta.is_none())
                .map(|i| i.is_control_transfer())
                .unwrap_or(false);
            if !has_terminator {
                continue;
            }
            let mut tail: Vec<Instr> = plan
                .insertions
                .iter()
                .filter(|ins| {
                    ins.anchor.func == f.name
                        && ins.anchor.block == b.label
                        && ins.anchor.index == last
                        && ins.position == Position::After
                })
                .map(|ins| ins.instr.clone())
                .collect();
            if !tail.is_empty() {
                pending.push((bi + 1, std::mem::take(&mut tail)));
            }
        }
        for (bi, tail) in pending {
            if let Some(next) = f.blocks.get_mut(bi) {
                for (k, i) in tail.into_iter().enumerate() {
                    next.instrs.insert(k, i);
                }
            }
        }
    }
    out
}

/// A paired DFI protection: one source tuple, its sinks, and the tag.
#[derive(Debug, Clone)]
pub(crate) struct DfiPairing {
    pub var: VarId,
    pub src: PolicyTuple,
    pub sinks: Vec<PolicyTuple>,
}

pub(crate) fn pair_dfi(tuples: &[PolicyTuple]) -> Result<Vec<DfiPairing>, InstrumentError> {
    let mut by_var: BTreeMap<VarId, (Vec<&PolicyTuple>, Vec<&PolicyTuple>)> = BTreeMap::new();
    for t in tuples {
        let entry = by_var.entry(t.var.clone()).or_default();
        match t.kind {
            TupleKind::DfiSource => entry.0.push(t),
            TupleKind::DfiSink => entry.1.push(t),
            TupleKind::Spectre => {}
        }
    }
    let mut out = Vec::new();
    for (var, (srcs, sinks)) in by_var {
        match (srcs.as_slice(), sinks.is_empty()) {
            ([], true) => {}
            ([], false) => return Err(InstrumentError::NoSourceForSink(var)),
            ([_], true) => return Err(InstrumentError::NoSinkForSource(var)),
            ([src], false) => out.push(DfiPairing {
                var,
                src: (*src).clone(),
                sinks: sinks.into_iter().cloned().collect(),
            }),
            _ => return Err(InstrumentError::DuplicateSource(var)),
        }
    }
    Ok(out)
}

/// Mechanism A: a `bti c` landing pad at the entry of every function that
/// is an indirect-call target.
pub(crate) fn plan_bti(plan: &mut InstrumentationPlan, p: &AsmProgram, members: &[String]) {
    for func in members {
        let Some(f) = p.function(func) else { continue };
        let entry = Loc::new(f.name.clone(), f.entry.clone(), 0);
        plan.push(
            entry,
            Position::Before,
            0,
            Instr::tagged(Mnemonic::Bti, vec![Operand::Bti(BtiMode::C)], Mechanism::A),
            Mechanism::A,
            vec![format!("cfi-target:{func}")],
        );
    }
}

/// Mechanism C for one plain (unfused) DFI pairing.
pub(crate) fn plan_dfi_pair(
    plan: &mut InstrumentationPlan,
    alloc: &mut ScratchAlloc<'_>,
    pairing: &DfiPairing,
    skip_sinks: bool,
) -> Result<(), InstrumentError> {
    let tag = pairing.src.tag;
    let scratch = alloc.claim(
        &pairing.src.loc.func,
        &pairing.src.loc,
        &pairing.src.loc,
        &[],
    )?;
    let sign_id = {
        plan.push(
            pairing.src.loc.clone(),
            Position::After,
            10,
            mov_imm(scratch, tag.0, Mechanism::C),
            Mechanism::C,
            vec![pairing.src.id()],
        );
        plan.push(
            pairing.src.loc.clone(),
            Position::After,
            11,
            pac(Mnemonic::Pacda, pairing.var.reg, scratch, Mechanism::C),
            Mechanism::C,
            vec![pairing.src.id()],
        )
    };
    if skip_sinks {
        return Ok(());
    }
    for sink in &pairing.sinks {
        let scratch = alloc.claim(&sink.loc.func, &sink.loc, &sink.loc, &[])?;
        plan.push(
            sink.loc.clone(),
            Position::Before,
            10,
            mov_imm(scratch, tag.0, Mechanism::C),
            Mechanism::C,
            vec![sink.id()],
        );
        let aut_id = plan.push(
            sink.loc.clone(),
            Position::Before,
            11,
            pac(Mnemonic::Autda, pairing.var.reg, scratch, Mechanism::C),
            Mechanism::C,
            vec![sink.id()],
        );
        plan.pairings.push((sign_id, aut_id));
    }
    Ok(())
}

/// Mechanism E for one spectre tuple: sign with the true tag after the
/// comparison, poison-select the authentication modifier, verify before
/// the guarded use.
pub(crate) fn plan_spectre(
    plan: &mut InstrumentationPlan,
    alloc: &mut ScratchAlloc<'_>,
    tuple: &PolicyTuple,
    cand: &SpectreCandidate,
) -> Result<(), InstrumentError> {
    let cmp = &cand.branch.cmp_loc;
    let modifier = alloc.claim(&cmp.func, cmp, &cand.use_loc, &[])?;
    plan.push(
        cmp.clone(),
        Position::After,
        20,
        mov_imm(modifier, tuple.tag.0, Mechanism::E),
        Mechanism::E,
        vec![tuple.id()],
    );
    let sign_id = plan.push(
        cmp.clone(),
        Position::After,
        21,
        pac(Mnemonic::Pacia, cand.value.reg, modifier, Mechanism::E),
        Mechanism::E,
        vec![tuple.id()],
    );
    plan.push(
        cmp.clone(),
        Position::After,
        22,
        csel(modifier, modifier, Reg::Xzr, cand.guarded_cond, Mechanism::E),
        Mechanism::E,
        vec![tuple.id()],
    );
    let aut_id = plan.push(
        cand.use_loc.clone(),
        Position::Before,
        20,
        pac(Mnemonic::Autia, cand.value.reg, modifier, Mechanism::E),
        Mechanism::E,
        vec![tuple.id()],
    );
    plan.pairings.push((sign_id, aut_id));
    Ok(())
}

/// Fused dual protection: one data-key PA pair covers both the DFI span
/// and the speculation check. Sign at the shared definition with the fused
/// modifier; select fused-or-poison at the comparison; verify at the use.
pub(crate) fn plan_fused_dual(
    plan: &mut InstrumentationPlan,
    alloc: &mut ScratchAlloc<'_>,
    p: &AsmProgram,
    fused: &FusedPolicy,
    pairing: &DfiPairing,
    cand: &SpectreCandidate,
) -> Result<(), InstrumentError> {
    let [sink] = pairing.sinks.as_slice() else {
        return Err(InstrumentError::UnsupportedFusionShape(fused.var.clone()));
    };
    if sink.loc != cand.use_loc {
        return Err(InstrumentError::UnsupportedFusionShape(fused.var.clone()));
    }
    check_span_tolerates_signing(p, &fused.var, &fused.loc, &cand.use_loc)?;

    let sign_scratch = alloc.claim(&fused.loc.func, &fused.loc, &fused.loc, &[])?;
    plan.push(
        fused.loc.clone(),
        Position::After,
        10,
        mov_imm(sign_scratch, fused.mod_fused.0, Mechanism::C),
        Mechanism::C,
        fused.sources.clone(),
    );
    let sign_id = plan.push(
        fused.loc.clone(),
        Position::After,
        11,
        pac(Mnemonic::Pacda, fused.var.reg, sign_scratch, Mechanism::C),
        Mechanism::C,
        fused.sources.clone(),
    );

    let cmp = &cand.branch.cmp_loc;
    let modifier = alloc.claim(&cmp.func, cmp, &cand.use_loc, &[])?;
    plan.push(
        cmp.clone(),
        Position::After,
        20,
        mov_imm(modifier, fused.mod_fused.0, Mechanism::C),
        Mechanism::C,
        fused.sources.clone(),
    );
    plan.push(
        cmp.clone(),
        Position::After,
        21,
        csel(modifier, modifier, Reg::Xzr, cand.guarded_cond, Mechanism::E),
        Mechanism::E,
        fused.sources.clone(),
    );
    let aut_id = plan.push(
        cand.use_loc.clone(),
        Position::Before,
        20,
        pac(Mnemonic::Autda, fused.var.reg, modifier, Mechanism::C),
        Mechanism::C,
        fused.sources.clone(),
    );
    plan.pairings.push((sign_id, aut_id));
    Ok(())
}

/// Serial dual protection (modifier fusion off): the DFI span is verified
/// early, right before the comparison, and the value is then re-signed for
/// the speculation check. Two PA pairs in sequence, never nested.
pub(crate) fn plan_serial_dual(
    plan: &mut InstrumentationPlan,
    alloc: &mut ScratchAlloc<'_>,
    p: &AsmProgram,
    pairing: &DfiPairing,
    spectre_tuple: &PolicyTuple,
    cand: &SpectreCandidate,
) -> Result<(), InstrumentError> {
    let cmp = &cand.branch.cmp_loc;
    check_span_tolerates_signing(p, &pairing.var, &pairing.src.loc, cmp)?;

    let dfi_tag = pairing.src.tag;
    let s1 = alloc.claim(
        &pairing.src.loc.func,
        &pairing.src.loc,
        &pairing.src.loc,
        &[],
    )?;
    plan.push(
        pairing.src.loc.clone(),
        Position::After,
        10,
        mov_imm(s1, dfi_tag.0, Mechanism::C),
        Mechanism::C,
        vec![pairing.src.id()],
    );
    let sign1 = plan.push(
        pairing.src.loc.clone(),
        Position::After,
        11,
        pac(Mnemonic::Pacda, pairing.var.reg, s1, Mechanism::C),
        Mechanism::C,
        vec![pairing.src.id()],
    );
    let s2 = alloc.claim(&cmp.func, cmp, cmp, &[])?;
    plan.push(
        cmp.clone(),
        Position::Before,
        10,
        mov_imm(s2, dfi_tag.0, Mechanism::C),
        Mechanism::C,
        vec![pairing.sinks.first().map(|s| s.id()).unwrap_or_default()],
    );
    let aut1 = plan.push(
        cmp.clone(),
        Position::Before,
        11,
        pac(Mnemonic::Autda, pairing.var.reg, s2, Mechanism::C),
        Mechanism::C,
        vec![pairing.sinks.first().map(|s| s.id()).unwrap_or_default()],
    );
    plan.pairings.push((sign1, aut1));

    plan_spectre(plan, alloc, spectre_tuple, cand)
}

/// A signed value must not be consumed by PAC-intolerant instructions
/// between its signing point and its authentication.
fn check_span_tolerates_signing(
    p: &AsmProgram,
    var: &VarId,
    from: &Loc,
    to: &Loc,
) -> Result<(), InstrumentError> {
    let Some(f) = p.function(&from.func) else {
        return Err(InstrumentError::UnknownLoc(from.clone()));
    };
    let mut inside = false;
    for (loc, i) in f.locs() {
        if loc == *to {
            break;
        }
        if inside {
            let value_store = matches!(i.mnemonic, Mnemonic::Str | Mnemonic::Strb)
                && matches!(i.operands.first(), Some(Operand::Reg(r)) if *r == var.reg);
            let redefinition = i.defs().contains(&var.reg);
            if i.uses().contains(&var.reg) && !value_store {
                return Err(InstrumentError::UnsupportedFusionShape(var.clone()));
            }
            if redefinition && !matches!(i.mnemonic, Mnemonic::Ldr | Mnemonic::Ldrb) {
                return Err(InstrumentError::UnsupportedFusionShape(var.clone()));
            }
        }
        if loc == *from {
            inside = true;
        }
    }
    Ok(())
}
