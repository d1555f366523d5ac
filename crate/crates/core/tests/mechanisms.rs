//! Per-mechanism behavior at the operation level: landing pads, data
//! integrity shapes, conditional-modifier shapes, carrier choice, and
//! ordering repair.

use janus_core::analysis::{
    compute_taint, derive_spectre_candidates, find_dop_branches, Liveness,
};
use janus_core::asm::{parse_program, Cond, Loc, Mechanism, Mnemonic, Reg};
use janus_core::corpus;
use janus_core::instrument::{
    enforce_ordering, fuse_cfi_context, harden, insert_bti, instrument_dfi, Carrier,
    HardenContext, HardenOptions, SiteTargets,
};
use janus_core::policy::{
    CfiSitePolicy, ModifierTag, PolicySet, PolicyTuple, TupleKind, VarId,
};

fn parse(text: &str) -> janus_core::asm::AsmProgram {
    parse_program(text).unwrap().program
}

#[test]
fn insert_bti_marks_every_target_once() {
    let text = "\
main:
\tmov x8, =a
\tblr x8
\tret
a:
\tret
b:
\tret
c:
\tret
d:
\tret
helper:
\tret
.data
t:
\t.quad a, b, c, d
";
    let p = parse(text);
    let members: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let out = insert_bti(&p, &members);
    let btis = out
        .functions
        .iter()
        .flat_map(|f| &f.blocks)
        .flat_map(|b| &b.instrs)
        .filter(|i| i.mnemonic == Mnemonic::Bti)
        .count();
    assert_eq!(btis, 4);
    for name in ["a", "b", "c", "d"] {
        let f = out.function(name).unwrap();
        assert_eq!(f.blocks[0].instrs[0].mnemonic, Mnemonic::Bti);
        assert_eq!(f.blocks[0].instrs[0].meta, Some(Mechanism::A));
    }
    // The never-address-taken helper is untouched.
    assert_eq!(out.function("helper"), p.function("helper"));
}

#[test]
fn dfi_two_sinks_one_source() {
    // Sinks on the two sides of a diamond: each path verifies once.
    let text = "\
f:
.bb1:
\tmov x20, =src
\tldr x9, [x20]
\tcmp x9, x0
\tb.ge .bb3
.bb2:
\tstr x9, [x21]
\tb .bb4
.bb3:
\tstr x9, [x22]
\tb .bb4
.bb4:
\tret
.data
src:
\t.quad 0x1
";
    let p = parse(text);
    let var = VarId::new(Reg::X(9), Loc::new("f", ".bb1", 1));
    let tuples = vec![
        PolicyTuple {
            var: var.clone(),
            loc: Loc::new("f", ".bb1", 1),
            tag: ModifierTag(0x135),
            kind: TupleKind::DfiSource,
        },
        PolicyTuple {
            var: var.clone(),
            loc: Loc::new("f", ".bb2", 0),
            tag: ModifierTag(0x135),
            kind: TupleKind::DfiSink,
        },
        PolicyTuple {
            var,
            loc: Loc::new("f", ".bb3", 0),
            tag: ModifierTag(0x135),
            kind: TupleKind::DfiSink,
        },
    ];
    let out = instrument_dfi(&p, &tuples).unwrap();
    let count = |m: Mnemonic| {
        out.functions
            .iter()
            .flat_map(|f| &f.blocks)
            .flat_map(|b| &b.instrs)
            .filter(|i| i.mnemonic == m && i.meta.is_some())
            .count()
    };
    assert_eq!(count(Mnemonic::Pacda), 1);
    assert_eq!(count(Mnemonic::Autda), 2);
}

#[test]
fn empty_dfi_leaves_program_unchanged() {
    let p = parse("f:\n mov x0, #1\n ret\n");
    let out = instrument_dfi(&p, &[]).unwrap();
    assert_eq!(out, p);
}

#[test]
fn empty_policy_harden_is_identity() {
    let p = parse("f:\n mov x0, #1\n ret\n");
    let policies = PolicySet::default();
    let ctx = HardenContext {
        candidates: Vec::new(),
        class_members: Vec::new(),
    };
    let (out, plan) = harden(&p, &policies, &ctx, HardenOptions::default()).unwrap();
    assert_eq!(out, p);
    assert!(plan.insertions.is_empty());
}

#[test]
fn both_guarded_sides_get_complementary_conditions() {
    // Each side of the branch consumes its own tainted pointer.
    let text = "\
.global main
main:
.bb1:
\tmov x20, =input
\tldr x9, [x20]
\tmov x26, =input2
\tldr x14, [x26]
\tmov x21, =bound
\tldr x1, [x21]
\tcmp x9, x1
\tb.ge .bb3
.bb2:
\tmov x22, =arr
\tldrb w10, [x22, x9]
\tb .bb4
.bb3:
\tmov x23, =arr
\tldrb w15, [x23, x14]
\tb .bb4
.bb4:
\tmov x0, #0
\tret

.data
input:
\t.quad 0x1
input2:
\t.quad 0x2
bound:
\t.quad 0x4
arr:
\t.byte 0x1, 0x2, 0x3, 0x4
";
    let p = parse(text);
    let inputs = vec!["input".to_string(), "input2".to_string()];
    let taint = compute_taint(&p, &inputs);
    let branches = find_dop_branches(&p, &taint);
    assert_eq!(branches.len(), 1);
    let candidates = derive_spectre_candidates(&p, &taint, &branches);
    assert_eq!(candidates.len(), 2, "both sides produce a candidate");
    let conds: Vec<Cond> = candidates.iter().map(|c| c.guarded_cond).collect();
    assert_eq!(conds[0], conds[1].invert(), "conditions are complements");

    // Fully hardened, both sequences appear with complementary selects.
    let case = corpus::CorpusCase {
        name: "both-sides".into(),
        asm: text.to_string(),
        sidecar: "input input\ninput input2\n".into(),
        external_policy: None,
        scenario: None,
        overrides: Default::default(),
    };
    let prepared = corpus::prepare(&case, HardenOptions::default(), 7).unwrap();
    let emitted = janus_core::asm::emit_program(&prepared.hardened).unwrap();
    assert!(emitted.contains("xzr, ge // janus:E"));
    assert!(emitted.contains("xzr, lt // janus:E"));
}

#[test]
fn carrier_choice_prefers_existing_then_lr_then_general() {
    let case = corpus::cr_carrier_case();
    let p = parse(&case.asm);
    let external =
        janus_core::policy::load_external_policy(case.external_policy.as_ref().unwrap()).unwrap();
    let site = CfiSitePolicy {
        site: Loc::new("main", ".bb1", 5),
        tag: ModifierTag(0x40),
    };
    let sites = vec![SiteTargets {
        site: &site,
        targets: vec!["consumer".to_string()],
    }];
    let choices = fuse_cfi_context(&sites, &external.dfi, &p).unwrap();
    assert_eq!(choices.len(), 1);
    assert_eq!(
        choices[0].carrier,
        Carrier::Existing {
            reg: Reg::X(0),
            orig_mod: ModifierTag(0xcc)
        }
    );

    // Without existing policies: non-leaf targets fall back to the link
    // register, leaves to the general-purpose register.
    let lr_case = corpus::cr_lr_case();
    let lr_p = parse(&lr_case.asm);
    let lr_site = CfiSitePolicy {
        site: Loc::new("main", ".bb1", 3),
        tag: ModifierTag(0x41),
    };
    let lr_sites = vec![SiteTargets {
        site: &lr_site,
        targets: vec!["worker".to_string()],
    }];
    let lr_choices = fuse_cfi_context(&lr_sites, &[], &lr_p).unwrap();
    assert_eq!(lr_choices[0].carrier, Carrier::LinkRegister);

    let leaf_sites = vec![SiteTargets {
        site: &site,
        targets: vec!["consumer".to_string()],
    }];
    let leaf_choices = fuse_cfi_context(&leaf_sites, &[], &p).unwrap();
    assert_eq!(leaf_choices[0].carrier, Carrier::GeneralRegister);
}

#[test]
fn ordering_repair_swaps_a_late_verification() {
    let text = "\
f:
\tmov x11, #0x135
\tldrb w10, [x22, x9]
\tautia x9, x11 // janus:E
\tret
";
    let p = parse(text);
    let f = p.function("f").unwrap();
    let repaired = enforce_ordering(f).unwrap();
    let mnems: Vec<Mnemonic> = repaired.blocks[0]
        .instrs
        .iter()
        .map(|i| i.mnemonic)
        .collect();
    assert_eq!(
        mnems,
        vec![Mnemonic::Mov, Mnemonic::Autia, Mnemonic::Ldrb, Mnemonic::Ret]
    );
}

#[test]
fn ordering_already_correct_is_untouched() {
    let text = "\
f:
\tmov x11, #0x135
\tautia x9, x11 // janus:E
\tldrb w10, [x22, x9]
\tret
";
    let p = parse(text);
    let f = p.function("f").unwrap();
    let repaired = enforce_ordering(f).unwrap();
    assert_eq!(&repaired, f);
}

#[test]
fn ordering_hoists_verification_above_a_signature_read() {
    // A transient read of the authentication code (top bits) before the
    // verification is the code-extraction shape; the verification hoists
    // above it.
    let text = "\
f:
\tmov x11, #0x135
\tpacda x0, x11 // janus:C
\tlsr x12, x0, #48
\tautda x0, x11 // janus:C
\tret
";
    let p = parse(text);
    let f = p.function("f").unwrap();
    let repaired = enforce_ordering(f).unwrap();
    let mnems: Vec<Mnemonic> = repaired.blocks[0]
        .instrs
        .iter()
        .map(|i| i.mnemonic)
        .collect();
    assert_eq!(
        mnems,
        vec![
            Mnemonic::Mov,
            Mnemonic::Pacda,
            Mnemonic::Autda,
            Mnemonic::Lsr,
            Mnemonic::Ret
        ]
    );
}

#[test]
fn ordering_unsatisfiable_when_original_code_must_move() {
    // The modifier only exists after the exposing load, so the
    // verification cannot be hoisted above it.
    let text = "\
f:
\tldrb w10, [x22, x9]
\tmov x11, #0x135
\tautia x9, x11 // janus:E
\tret
";
    let p = parse(text);
    let f = p.function("f").unwrap();
    let err = enforce_ordering(f).unwrap_err();
    assert!(matches!(
        err,
        janus_core::instrument::InstrumentError::OrderingUnsatisfiable(_)
    ));
}

#[test]
fn scratch_registers_are_dead_at_claim_sites() {
    // Liveness sanity on the worked example: x11 is dead at the guarded
    // block entry before instrumentation claims it.
    let case = corpus::worked_example();
    let p = parse(&case.asm);
    let f = p.function("victim").unwrap();
    let live = Liveness::compute(f);
    assert!(live.dead_before(&Loc::new("victim", ".bb2", 0), Reg::X(11)));
    assert!(!live.dead_before(&Loc::new("victim", ".bb3", 1), Reg::X(1)));
}

#[test]
fn one_call_level_flags_branch_but_two_levels_do_not() {
    let text = "\
.global entry1
entry1:
.bb1:
\tstr x30, [sp, #8]
\tbl loader
.bb2:
\tldr x30, [sp, #8]
\tcmp x0, #4
\tb.ge .bb3
.bb3:
\tret
loader:
\tmov x20, =input
\tldr x0, [x20]
\tret
outer:
.ob1:
\tstr x30, [sp, #16]
\tbl mid
.ob2:
\tldr x30, [sp, #16]
\tcmp x0, #4
\tb.ge .ob3
.ob3:
\tret
mid:
\tstr x30, [sp, #24]
\tbl loader
.mb2:
\tldr x30, [sp, #24]
\tret

.data
input:
\t.quad 0x9
";
    let p = parse(text);
    let taint = compute_taint(&p, &["input".to_string()]);
    let branches = find_dop_branches(&p, &taint);
    assert!(
        branches.iter().any(|b| b.site.func == "entry1"),
        "one call level flags the branch"
    );
    assert!(
        !branches.iter().any(|b| b.site.func == "outer"),
        "two call levels do not propagate"
    );
}
