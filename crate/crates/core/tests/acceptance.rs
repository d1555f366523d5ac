//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its number when it holds. Tolerances are zero-exception unless
//! stated otherwise.

use std::collections::BTreeMap;

use janus_core::asm::{emit_program, Mechanism, Mnemonic};
use janus_core::corpus;
use janus_core::instrument::{strip_spectre, HardenOptions};
use janus_core::policy::TupleKind;
use janus_core::sim::attacks::{pacman::guess_traces, run_attack, AttackContext};
use janus_core::sim::{Machine, Image, Outcome, SimConfig, WriteDirective};
use janus_core::validator::{stats, validate, RuleId};

const SEED: u64 = 0xacce_5eed;

fn full() -> HardenOptions {
    HardenOptions { mf: true, cr: true }
}

fn opts(mf: bool, cr: bool) -> HardenOptions {
    HardenOptions { mf, cr }
}

/// Criterion 1: Spectre V1/V2/V5 on at least six structurally distinct
/// gadgets per variant — every unhardened program leaks, every hardened
/// one reports no leak and a recorded squash cause.
#[test]
fn criterion_01_spectre_v1_v2_v5() {
    let cfg = SimConfig::default();
    for (variant, cases) in [
        ("v1", corpus::v1_cases()),
        ("v2", corpus::v2_cases()),
        ("v5", corpus::v5_cases()),
    ] {
        assert!(cases.len() >= 6, "{variant}: need at least 6 gadgets");
        for case in cases {
            let prepared = corpus::prepare(&case, full(), SEED).unwrap();
            let sc = prepared.scenario.as_ref().unwrap();
            let before = run_attack(&prepared.program, sc, &cfg).unwrap();
            assert!(before.leaked, "{}: no leak before hardening", case.name);
            let after = run_attack(&prepared.hardened, sc, &cfg).unwrap();
            assert!(!after.leaked, "{}: leak after hardening", case.name);
            assert!(after.squash.is_some(), "{}: no squash cause", case.name);
        }
    }
    println!("criterion 1 (spectre v1/v2/v5 corpus): PASS");
}

/// Criterion 2: the PAC-guess oracle distinguishes guesses before
/// hardening; after hardening all sixteen sampled traces are byte-identical.
#[test]
fn criterion_02_pacman() {
    let cfg = SimConfig::default();
    let case = corpus::pacman_case();
    let prepared = corpus::prepare(&case, full(), SEED).unwrap();
    let sc = prepared.scenario.as_ref().unwrap();

    let cx = AttackContext::new(&prepared.program, sc, &cfg);
    let before: Vec<String> = guess_traces(&cx)
        .unwrap()
        .iter()
        .map(|(_, t)| t.dump())
        .collect();
    assert_eq!(before.len(), 16);
    assert!(before.iter().any(|d| *d != before[0]), "oracle is blind");

    let cx = AttackContext::new(&prepared.hardened, sc, &cfg);
    let after: Vec<String> = guess_traces(&cx)
        .unwrap()
        .iter()
        .map(|(_, t)| t.dump())
        .collect();
    assert!(after.iter().all(|d| *d == after[0]), "hardened traces differ");

    assert!(run_attack(&prepared.program, sc, &cfg).unwrap().leaked);
    assert!(!run_attack(&prepared.hardened, sc, &cfg).unwrap().leaked);
    println!("criterion 2 (pacman guess oracle): PASS");
}

/// Criterion 3: architectural CFI and DOP — the wrong-class redirect and
/// the branch-variable overwrite succeed before hardening and fault on
/// authentication after.
#[test]
fn criterion_03_architectural_cfi_dop() {
    let cfg = SimConfig::default();
    for case in [corpus::cfi_hijack_case(), corpus::dop_case()] {
        let prepared = corpus::prepare(&case, full(), SEED).unwrap();
        let sc = prepared.scenario.as_ref().unwrap();
        let before = run_attack(&prepared.program, sc, &cfg).unwrap();
        assert!(before.leaked, "{}: attack failed before", case.name);
        let after = run_attack(&prepared.hardened, sc, &cfg).unwrap();
        assert!(!after.leaked, "{}", case.name);
        match &after.fault {
            Some(janus_core::sim::Fault::PacAuthFailure { .. }) => {}
            other => panic!("{}: expected auth failure, got {other:?}", case.name),
        }
    }
    println!("criterion 3 (architectural cfi/dop): PASS");
}

/// Criterion 4: hardened transient traces are identical under two
/// distinct secrets, for every corpus scenario.
#[test]
fn criterion_04_noninterference() {
    let cfg = SimConfig::default();
    for case in corpus::all_attack_cases() {
        let prepared = corpus::prepare(&case, full(), SEED).unwrap();
        let sc = prepared.scenario.as_ref().unwrap();
        let Some(secret) = sc.secret.clone() else {
            continue;
        };
        let mut with_a = sc.clone();
        with_a
            .writes
            .push(WriteDirective::Byte(format!("{secret}+0"), 0x21));
        let mut with_b = sc.clone();
        with_b
            .writes
            .push(WriteDirective::Byte(format!("{secret}+0"), 0xc3));
        let a = run_attack(&prepared.hardened, &with_a, &cfg).unwrap();
        let b = run_attack(&prepared.hardened, &with_b, &cfg).unwrap();
        let ta: Vec<_> = a.trace.transient_events().into_iter().cloned().collect();
        let tb: Vec<_> = b.trace.transient_events().into_iter().cloned().collect();
        assert_eq!(ta, tb, "{}: transient trace depends on secret", case.name);
    }
    println!("criterion 4 (noninterference): PASS");
}

/// Criterion 5: with fusion, exactly k fewer signing instructions than
/// without, where k counts (v, loc) pairs carrying both policies; fused
/// modifiers equal the XOR computed by an independent group-by oracle.
#[test]
fn criterion_05_modifier_fusion() {
    let case = corpus::mf_overlap_case();
    let fused = corpus::prepare(&case, opts(true, true), SEED).unwrap();
    let unfused = corpus::prepare(&case, opts(false, true), SEED).unwrap();

    // Independent oracle: brute-force group-by over the merged tuples.
    let mut dfi_mods: BTreeMap<(String, String), u16> = BTreeMap::new();
    for t in fused
        .policies
        .dfi
        .iter()
        .filter(|t| t.kind == TupleKind::DfiSource)
    {
        dfi_mods.insert((t.var.to_string(), t.loc.to_string()), t.tag.0);
    }
    let mut expected_fused: BTreeMap<(String, String), u16> = BTreeMap::new();
    for t in &fused.policies.spectre {
        let key = (t.var.to_string(), t.loc.to_string());
        if let Some(d) = dfi_mods.get(&key) {
            expected_fused.insert(key, d ^ t.tag.0);
        }
    }
    let k = expected_fused.len();
    assert_eq!(k, 2);

    let signs = |p: &janus_core::asm::AsmProgram| {
        p.functions
            .iter()
            .flat_map(|f| &f.blocks)
            .flat_map(|b| &b.instrs)
            .filter(|i| i.mnemonic.is_pac_sign() && i.meta.is_some())
            .count()
    };
    assert_eq!(signs(&unfused.hardened) - signs(&fused.hardened), k);

    let text = emit_program(&fused.hardened).unwrap();
    for ((var, _), m) in &expected_fused {
        let found = (11..=15)
            .map(|r| format!("mov x{r}, #{m:#x} // janus:C"))
            .any(|needle| text.contains(&needle));
        assert!(found, "fused modifier {m:#x} for {var} missing");
    }
    println!("criterion 5 (modifier fusion structure): PASS");
}

/// Criterion 6: carrier reuse allocates exactly one scratch register at
/// carrier-backed checks, and ablation instruction counts are monotone
/// along both chains for every corpus case.
#[test]
fn criterion_06_carrier_reuse_and_ablation() {
    let case = corpus::cr_carrier_case();
    let with_cr = corpus::prepare(&case, opts(true, true), SEED).unwrap();
    let entry_scratch = with_cr
        .plan
        .scratch_assignments
        .iter()
        .filter(|(k, _)| k == "entry:consumer")
        .count();
    assert_eq!(entry_scratch, 1);
    let without_cr = corpus::prepare(&case, opts(true, false), SEED).unwrap();
    let fresh_scratch = without_cr
        .plan
        .scratch_assignments
        .iter()
        .filter(|(k, _)| k == "entry:consumer")
        .count();
    assert!(fresh_scratch >= 2);

    for case in corpus::all_cases() {
        let count = |mf, cr| {
            corpus::prepare(&case, opts(mf, cr), SEED)
                .unwrap()
                .hardened
                .instr_count()
        };
        let (full_c, mf_only, cr_only, none) =
            (count(true, true), count(true, false), count(false, true), count(false, false));
        assert!(full_c <= mf_only && mf_only <= none, "{}", case.name);
        assert!(full_c <= cr_only && cr_only <= none, "{}", case.name);
    }
    println!("criterion 6 (carrier reuse and ablation ordering): PASS");
}

/// Criterion 7: instruction count of the full build minus the stripped
/// build equals the plan's mechanism-E insertion count.
#[test]
fn criterion_07_net_speculation_overhead() {
    for case in corpus::all_cases() {
        let prepared = corpus::prepare(&case, full(), SEED).unwrap();
        let stripped = strip_spectre(&prepared.hardened);
        let diff = prepared.hardened.instr_count() - stripped.instr_count();
        assert_eq!(
            diff,
            prepared.plan.count_by_mechanism(Mechanism::E),
            "{}",
            case.name
        );
    }
    println!("criterion 7 (net speculation overhead accounting): PASS");
}

/// Criterion 8: overhead percentages are reported and follow the same
/// monotone ordering as criterion 6.
#[test]
fn criterion_08_code_size_stats() {
    for case in corpus::all_cases() {
        let base = corpus::prepare(&case, full(), SEED).unwrap();
        let pct = |mf, cr| {
            let p = corpus::prepare(&case, opts(mf, cr), SEED).unwrap();
            let s = stats(&base.program, &p.hardened);
            assert_eq!(s.bytes_after, s.instrs_after * 4);
            s.overhead_percent
        };
        let (f, m, c, n) = (pct(true, true), pct(true, false), pct(false, true), pct(false, false));
        assert!(f <= m && m <= n, "{}", case.name);
        assert!(f <= c && c <= n, "{}", case.name);
        assert!(f >= 0.0);
    }
    println!("criterion 8 (code-size statistics): PASS");
}

/// Criterion 9: each validator rule is triggered by exactly its targeted
/// mutant, and the untouched output passes with zero violations.
#[test]
fn criterion_09_validator_mutations() {
    let case = corpus::worked_example();
    let prepared = corpus::prepare(&case, full(), SEED).unwrap();
    let clean = validate(&prepared.hardened, &prepared.plan, &prepared.policies);
    assert!(clean.passed(), "{}", clean.render_text());

    let hit = |p: &janus_core::asm::AsmProgram| -> Vec<RuleId> {
        let mut rules: Vec<RuleId> = validate(p, &prepared.plan, &prepared.policies)
            .violations
            .iter()
            .map(|v| v.rule)
            .collect();
        rules.dedup();
        rules
    };

    // R1: drop the landing pad.
    let mut p = prepared.hardened.clone();
    p.function_mut("handler_a").unwrap().blocks[0].instrs.remove(0);
    assert_eq!(hit(&p), vec![RuleId::R1]);

    // R2: drop a planned signing instruction.
    let mut p = prepared.hardened.clone();
    let bb2 = p.function_mut("victim").unwrap().block_mut(".bb2").unwrap();
    let pos = bb2.instrs.iter().position(|i| i.mnemonic == Mnemonic::Pacda).unwrap();
    bb2.instrs.remove(pos);
    assert_eq!(hit(&p), vec![RuleId::R2]);

    // R3: change a verification modifier immediate.
    let mut p = prepared.hardened.clone();
    let bb3 = p.function_mut("victim").unwrap().block_mut(".bb3").unwrap();
    let pos = bb3
        .instrs
        .iter()
        .position(|i| {
            i.mnemonic == Mnemonic::Mov
                && i.meta == Some(Mechanism::C)
                && matches!(i.operands.get(1), Some(janus_core::asm::Operand::Imm(v)) if *v == 0x135)
        })
        .unwrap();
    bb3.instrs[pos].operands[1] = janus_core::asm::Operand::Imm(0x999);
    assert_eq!(hit(&p), vec![RuleId::R3]);

    // R4: move a verification after its dependent load.
    let mut p = prepared.hardened.clone();
    let bb4 = p.function_mut("victim").unwrap().block_mut(".bb4").unwrap();
    let aut = bb4.instrs.iter().position(|i| i.mnemonic == Mnemonic::Autia).unwrap();
    let load = bb4.instrs.iter().position(|i| i.mnemonic == Mnemonic::Ldrb).unwrap();
    let moved = bb4.instrs.remove(aut);
    bb4.instrs.insert(load, moved);
    assert_eq!(hit(&p), vec![RuleId::R4]);

    // R5: drop the call-site tag transfer.
    let mut p = prepared.hardened.clone();
    let bb6 = p.function_mut("victim").unwrap().block_mut(".bb6").unwrap();
    let pos = bb6
        .instrs
        .iter()
        .position(|i| i.mnemonic == Mnemonic::Mov && i.meta == Some(Mechanism::B))
        .unwrap();
    bb6.instrs.remove(pos);
    assert_eq!(hit(&p), vec![RuleId::R5]);

    // R6: inject an unplanned tagged instruction.
    let mut p = prepared.hardened.clone();
    let bb5 = p.function_mut("victim").unwrap().block_mut(".bb5").unwrap();
    bb5.instrs.insert(
        0,
        janus_core::asm::Instr::tagged(
            Mnemonic::Pacda,
            vec![
                janus_core::asm::Operand::Reg(janus_core::asm::Reg::X(3)),
                janus_core::asm::Operand::Reg(janus_core::asm::Reg::X(11)),
            ],
            Mechanism::C,
        ),
    );
    assert_eq!(hit(&p), vec![RuleId::R6]);

    println!("criterion 9 (validator mutation suite): PASS");
}

/// Criterion 10: honest architectural runs return the same value and the
/// same final data memory before and after hardening, for every corpus
/// program. Memory cells holding values signed at rest compare equal on
/// their payload bits.
#[test]
fn criterion_10_semantic_preservation() {
    let cfg = SimConfig::default();
    for case in corpus::all_cases() {
        let prepared = corpus::prepare(&case, full(), SEED).unwrap();
        let entry = prepared
            .scenario
            .as_ref()
            .map(|s| s.entry.clone())
            .unwrap_or_else(|| "main".to_string());

        let image_before = Image::load(&prepared.program);
        let image_after = Image::load(&prepared.hardened);
        let before = Machine::new(&image_before, &cfg)
            .run_architectural(&entry, &[])
            .unwrap();
        let after = Machine::new(&image_after, &cfg)
            .run_architectural(&entry, &[])
            .unwrap();
        assert_eq!(before.outcome, Outcome::Returned, "{}", case.name);
        assert_eq!(after.outcome, Outcome::Returned, "{}", case.name);
        assert_eq!(
            before.state.regs[0], after.state.regs[0],
            "{}: return value changed",
            case.name
        );

        // Final data memory, modulo two principled exclusions: values
        // signed at rest compare on payload bits only, and cells holding
        // symbol addresses (layout-dependent) compare by whether they
        // changed from their initial value.
        let mut sym_cells: Vec<u64> = Vec::new();
        for d in &prepared.program.data {
            let mut at = image_before.region_addrs[&d.name];
            for item in &d.items {
                if matches!(item, janus_core::asm::DataItem::QuadSym(_)) {
                    sym_cells.push(at);
                }
                at += item.size();
            }
        }
        let data_end = janus_core::sim::DATA_BASE
            + janus_core::sim::REGION_SLOT * image_before.region_addrs.len() as u64;
        for addr in (janus_core::sim::DATA_BASE..data_end).step_by(8) {
            let b = before.state.read_mem(&image_before, addr, 8).unwrap_or(0);
            let a = after.state.read_mem(&image_after, addr, 8).unwrap_or(0);
            if sym_cells.contains(&addr) {
                let b0 = image_before.initial_data.get(&addr).copied().unwrap_or(0);
                let a0 = image_after.initial_data.get(&addr).copied().unwrap_or(0);
                assert_eq!(
                    (b as u8) != b0,
                    (a as u8) != a0,
                    "{}: pointer cell at {addr:#x} mutated on one side only",
                    case.name
                );
                continue;
            }
            if a != b {
                assert_eq!(
                    janus_core::sim::strip(a),
                    janus_core::sim::strip(b),
                    "{}: data at {addr:#x} diverged beyond the signature field",
                    case.name
                );
            }
        }
    }
    println!("criterion 10 (semantic preservation): PASS");
}

/// Criterion 11: two full pipeline runs with one seed produce
/// byte-identical assembly, plans, and traces.
#[test]
fn criterion_11_determinism() {
    let cfg = SimConfig::default();
    for case in corpus::all_attack_cases() {
        let one = corpus::prepare(&case, full(), SEED).unwrap();
        let two = corpus::prepare(&case, full(), SEED).unwrap();
        assert_eq!(
            emit_program(&one.hardened).unwrap(),
            emit_program(&two.hardened).unwrap(),
            "{}",
            case.name
        );
        assert_eq!(one.plan.to_json(), two.plan.to_json(), "{}", case.name);
        let sc = one.scenario.as_ref().unwrap();
        let t1 = run_attack(&one.hardened, sc, &cfg).unwrap().trace.dump();
        let t2 = run_attack(&two.hardened, sc, &cfg).unwrap().trace.dump();
        assert_eq!(t1, t2, "{}", case.name);
    }
    println!("criterion 11 (determinism): PASS");
}
