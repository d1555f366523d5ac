//! Validator mutation sensitivity: for each rule a targeted
//! single-instruction mutant triggers exactly that rule, and the untouched
//! pipeline output passes with zero violations.

use janus_core::asm::{AsmProgram, Instr, Mechanism, Mnemonic, Operand};
use janus_core::corpus;
use janus_core::instrument::HardenOptions;
use janus_core::validator::{validate, RuleId};

const SEED: u64 = 0x1234_5678;

struct Fixture {
    hardened: AsmProgram,
    plan: janus_core::policy::InstrumentationPlan,
    policies: janus_core::policy::PolicySet,
}

fn fixture() -> Fixture {
    let case = corpus::worked_example();
    let prepared = corpus::prepare(&case, HardenOptions { mf: true, cr: true }, SEED).unwrap();
    Fixture {
        hardened: prepared.hardened,
        plan: prepared.plan,
        policies: prepared.policies,
    }
}

fn rules_hit(fx: &Fixture, mutated: &AsmProgram) -> Vec<RuleId> {
    let report = validate(mutated, &fx.plan, &fx.policies);
    let mut rules: Vec<RuleId> = report.violations.iter().map(|v| v.rule).collect();
    rules.dedup();
    rules
}

#[test]
fn unmutated_output_passes() {
    let fx = fixture();
    let report = validate(&fx.hardened, &fx.plan, &fx.policies);
    assert!(report.passed(), "{}", report.render_text());
}

#[test]
fn deleting_bti_triggers_exactly_r1() {
    let fx = fixture();
    let mut p = fx.hardened.clone();
    let handler = p.function_mut("handler_a").unwrap();
    let entry = &mut handler.blocks[0];
    assert_eq!(entry.instrs[0].mnemonic, Mnemonic::Bti);
    entry.instrs.remove(0);
    let report = validate(&p, &fx.plan, &fx.policies);
    assert_eq!(rules_hit(&fx, &p), vec![RuleId::R1]);
    assert!(report
        .violations
        .iter()
        .all(|v| v.detail.contains("handler_a")));
}

#[test]
fn deleting_a_sign_triggers_exactly_r2() {
    let fx = fixture();
    let mut p = fx.hardened.clone();
    let victim = p.function_mut("victim").unwrap();
    let bb2 = victim.block_mut(".bb2").unwrap();
    let pos = bb2
        .instrs
        .iter()
        .position(|i| i.mnemonic == Mnemonic::Pacda && i.meta == Some(Mechanism::C))
        .unwrap();
    bb2.instrs.remove(pos);
    assert_eq!(rules_hit(&fx, &p), vec![RuleId::R2]);
}

#[test]
fn changing_an_auth_modifier_triggers_exactly_r3() {
    let fx = fixture();
    let mut p = fx.hardened.clone();
    let victim = p.function_mut("victim").unwrap();
    let bb3 = victim.block_mut(".bb3").unwrap();
    // The mov feeding the verification's modifier register.
    let pos = bb3
        .instrs
        .iter()
        .position(|i| {
            i.mnemonic == Mnemonic::Mov
                && i.meta == Some(Mechanism::C)
                && matches!(i.operands.get(1), Some(Operand::Imm(v)) if *v == 0x135)
        })
        .unwrap();
    bb3.instrs[pos].operands[1] = Operand::Imm(0x136);
    let report = validate(&p, &fx.plan, &fx.policies);
    assert_eq!(rules_hit(&fx, &p), vec![RuleId::R3]);
    let v = &report.violations[0];
    assert!(v.detail.contains("0x135") && v.detail.contains("0x136"), "{}", v.detail);
}

#[test]
fn reordering_a_verification_triggers_exactly_r4() {
    let fx = fixture();
    let mut p = fx.hardened.clone();
    let victim = p.function_mut("victim").unwrap();
    let bb4 = victim.block_mut(".bb4").unwrap();
    let aut_pos = bb4
        .instrs
        .iter()
        .position(|i| i.mnemonic == Mnemonic::Autia)
        .unwrap();
    let load_pos = bb4
        .instrs
        .iter()
        .position(|i| i.mnemonic == Mnemonic::Ldrb)
        .unwrap();
    assert!(aut_pos < load_pos);
    let aut = bb4.instrs.remove(aut_pos);
    bb4.instrs.insert(load_pos, aut);
    assert_eq!(rules_hit(&fx, &p), vec![RuleId::R4]);
}

#[test]
fn deleting_the_site_tag_mov_triggers_exactly_r5() {
    let fx = fixture();
    let mut p = fx.hardened.clone();
    let victim = p.function_mut("victim").unwrap();
    let bb6 = victim.block_mut(".bb6").unwrap();
    let pos = bb6
        .instrs
        .iter()
        .position(|i| {
            i.mnemonic == Mnemonic::Mov
                && i.meta == Some(Mechanism::B)
                && matches!(i.operands.get(1), Some(Operand::Imm(v)) if *v == 0x9c2)
        })
        .unwrap();
    bb6.instrs.remove(pos);
    assert_eq!(rules_hit(&fx, &p), vec![RuleId::R5]);
}

#[test]
fn inserting_an_unplanned_tagged_instruction_triggers_exactly_r6() {
    let fx = fixture();
    let mut p = fx.hardened.clone();
    let victim = p.function_mut("victim").unwrap();
    let bb5 = victim.block_mut(".bb5").unwrap();
    bb5.instrs.insert(
        0,
        Instr::tagged(
            Mnemonic::Pacda,
            vec![
                Operand::Reg(janus_core::asm::Reg::X(3)),
                Operand::Reg(janus_core::asm::Reg::X(11)),
            ],
            Mechanism::C,
        ),
    );
    assert_eq!(rules_hit(&fx, &p), vec![RuleId::R6]);
}
