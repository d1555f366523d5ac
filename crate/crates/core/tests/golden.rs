//! Golden-pattern checks on the worked example: the hardened text must
//! contain the expected instrumentation shapes with the pinned tags.

use janus_core::asm::emit_program;
use janus_core::corpus;
use janus_core::instrument::HardenOptions;

const SEED: u64 = 0x1234_5678;

fn hardened_text(mf: bool, cr: bool) -> String {
    let case = corpus::worked_example();
    let prepared = corpus::prepare(&case, HardenOptions { mf, cr }, SEED).unwrap();
    emit_program(&prepared.hardened).unwrap()
}

#[test]
fn worked_example_matches_hardened_pattern() {
    let text = hardened_text(true, true);

    // Mechanism A: the handler gets a landing pad at entry.
    assert!(text.contains("handler_a:\n\tbti c // janus:A"));

    // Mechanism C: sign at the generation point, verify at the use point.
    let bb2 = text.split(".bb2:").nth(1).unwrap().split(".bb3:").next().unwrap();
    assert!(bb2.contains("mov x11, #0x135 // janus:C"));
    assert!(bb2.contains("pacda x9, x11 // janus:C"));
    let bb3 = text.split(".bb3:").nth(1).unwrap().split(".bb4:").next().unwrap();
    assert!(bb3.contains("autda x9, x11 // janus:C"));

    // Mechanism E: the conditional-modifier sequence after the comparison,
    // selecting the tag exactly when the guarded path is really taken.
    assert!(bb3.contains("pacia x9,"));
    assert!(bb3.contains("xzr, lt // janus:E"));
    let bb4 = text.split(".bb4:").nth(1).unwrap().split(".bb5:").next().unwrap();
    assert!(bb4.contains("autia x9,"));

    // Mechanism B: tagged call site and checked entry.
    let bb6 = text.split(".bb6:").nth(1).unwrap().split(".bb7:").next().unwrap();
    assert!(bb6.contains("mov x11, #0x9c2 // janus:B"));
    let handler = text.split("handler_a:").nth(1).unwrap();
    assert!(handler.contains("cmp x11, #0x9c2 // janus:B"));
    assert!(handler.contains("csel x11, x11, xzr, eq // janus:B"));
    assert!(handler.contains("autda x10, x11 // janus:B"));
}

#[test]
fn emit_contains_expected_mnemonics() {
    let text = hardened_text(true, true);
    for needle in ["pacda", "autda", "csel", "bti", "pacia", "autia"] {
        assert!(text.contains(needle), "missing '{needle}'");
    }
}

#[test]
fn verification_order_holds_in_guarded_block() {
    let text = hardened_text(true, true);
    let bb4 = text.split(".bb4:").nth(1).unwrap().split(".bb5:").next().unwrap();
    let aut_pos = bb4.find("autia x9").expect("guarded block verifies x9");
    let load_pos = bb4.find("[x22, x9]").expect("guarded block loads via x9");
    assert!(
        aut_pos < load_pos,
        "verification must precede the dependent load"
    );
}
