//! Deterministic ARM64-subset simulator with architectural and speculative
//! semantics, a cache-trace observer, and an attack-scenario harness.

pub mod attacks;
mod exec;
mod machine;
mod pac;
mod scenario;
mod trace;

pub use exec::{
    run_architectural, run_speculative_episode, Fault, Machine, Mistrain, Outcome, RunResult,
    SimError,
};
pub use machine::{
    FlatInstr, Image, MachineState, Mode, Nzcv, SimConfig, CACHE_LINE, CODE_BASE, DATA_BASE,
    REGION_SLOT, RETURN_SENTINEL, STACK_BASE, STACK_TOP,
};
pub use pac::{auth, compute_pac, sign, strip, PacDomain, PacMismatch, PacValue};
pub use scenario::{
    parse_scenario, AttackScenario, PacmanParams, QuadSource, ScenarioError, Variant,
    WriteDirective,
};
pub use trace::{CacheTrace, Phase, SquashCause, TraceEvent};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{parse_program, Loc, Reg};

    fn parse(text: &str) -> crate::asm::AsmProgram {
        parse_program(text).expect("test program parses").program
    }

    /// Bounds-check gadget; the attacker-controlled index sits in `input`
    /// and reaches the secret at `arr + 0x8000` (one region slot away).
    const V1_GADGET: &str = "\
.global main
main:
.bb1:
\tmov x20, =input
\tldr x9, [x20]
\tmov x21, =bound
\tldr x1, [x21]
\tcmp x9, x1
\tb.ge .bb3
.bb2:
\tmov x22, =arr
\tldrb w10, [x22, x9]
\tmov x23, =probe
\tlsl x10, x10, #6
\tldrb w11, [x23, x10]
\tb .bb3
.bb3:
\tmov x0, #0
\tret

.data
input:
\t.quad 0x8000
bound:
\t.quad 0x4
arr:
\t.byte 0x1, 0x2, 0x3, 0x4
secret:
\t.byte 0x5a
probe:
\t.byte 0x0
";

    // Same gadget with a hand-written conditional-modifier sequence: the
    // value is signed with the true tag, and the authentication modifier is
    // poisoned unless the in-bounds condition really held.
    const V1_GADGET_PROTECTED: &str = "\
.global main
main:
.bb1:
\tmov x20, =input
\tldr x9, [x20]
\tmov x21, =bound
\tldr x1, [x21]
\tcmp x9, x1
\tmov x11, #0x135
\tpacia x9, x11
\tcsel x11, x11, xzr, lt
\tb.ge .bb3
.bb2:
\tautia x9, x11
\tldrb w10, [x22, x9]
\tb .bb3
.bb3:
\tmov x0, #0
\tret

.data
input:
\t.quad 0x8000
bound:
\t.quad 0x4
arr:
\t.byte 0x1, 0x2, 0x3, 0x4
secret:
\t.byte 0x5a
probe:
\t.byte 0x0
";

    #[test]
    fn unhardened_v1_gadget_leaks_secret_line() {
        // input holds 0x10000 = &secret - &arr (two 0x8000 slots apart).
        let p = parse(V1_GADGET);
        let image = Image::load(&p);
        let secret_base = image.region_addrs["secret"];
        let arr_base = image.region_addrs["arr"];
        assert_eq!(secret_base - arr_base, 0x8000);
        let probe_base = image.region_addrs["probe"];

        let mistrain = Mistrain::Branch {
            loc: Loc::new("main", ".bb1", 5),
            taken: false,
        };
        let cfg = SimConfig::default();
        let run =
            run_speculative_episode(&p, "main", &[], Some(&mistrain), &cfg).unwrap();
        assert_eq!(run.outcome, Outcome::Returned);
        let lines = run.trace.transient_lines();
        let expected_line = (probe_base + 0x5a * 64) / CACHE_LINE;
        assert!(lines.contains(&expected_line), "trace lacks the secret-indexed probe line");
    }

    #[test]
    fn protected_v1_gadget_squashes_before_probe() {
        let p = parse(V1_GADGET_PROTECTED);
        let image = Image::load(&p);
        let probe_base = image.region_addrs["probe"];
        let mistrain = Mistrain::Branch {
            loc: Loc::new("main", ".bb1", 8),
            taken: false,
        };
        let cfg = SimConfig::default();
        let run =
            run_speculative_episode(&p, "main", &[], Some(&mistrain), &cfg).unwrap();
        assert_eq!(run.outcome, Outcome::Returned);
        let squashes = run.trace.squashes();
        assert_eq!(squashes.len(), 1);
        assert_eq!(squashes[0].1, SquashCause::PacMismatch);
        let probe_line_base = probe_base / CACHE_LINE;
        assert!(run
            .trace
            .transient_lines()
            .iter()
            .all(|l| *l < probe_line_base || *l >= probe_line_base + 256));
    }

    #[test]
    fn zero_window_yields_no_transient_trace() {
        let p = parse(V1_GADGET);
        let mistrain = Mistrain::Branch {
            loc: Loc::new("main", ".bb1", 5),
            taken: false,
        };
        let cfg = SimConfig {
            window: 0,
            ..SimConfig::default()
        };
        let run = run_speculative_episode(&p, "main", &[], Some(&mistrain), &cfg).unwrap();
        assert!(run.trace.transient_lines().is_empty());
    }

    #[test]
    fn no_mistrain_episode_equals_architectural_run() {
        let p = parse(V1_GADGET);
        let cfg = SimConfig::default();
        let arch = run_architectural(&p, "main", &[], &cfg).unwrap();
        let spec = run_speculative_episode(&p, "main", &[], None, &cfg).unwrap();
        assert_eq!(arch.trace, spec.trace);
        assert_eq!(arch.state.regs, spec.state.regs);
    }

    #[test]
    fn architectural_auth_with_poisoned_modifier_faults() {
        let text = "\
main:
\tmov x0, #0x1234
\tmov x11, #0x9c2
\tpacda x0, x11
\tmov x11, #0
\tautda x0, x11
\tret
";
        let p = parse(text);
        let run = run_architectural(&p, "main", &[], &SimConfig::default()).unwrap();
        match run.outcome {
            Outcome::Fault(Fault::PacAuthFailure { loc }) => {
                assert_eq!(loc, Loc::new("main", "main", 4));
            }
            other => panic!("expected PAC fault, got {other:?}"),
        }
    }

    #[test]
    fn architectural_auth_with_matching_modifier_strips_and_continues() {
        let text = "\
main:
\tmov x0, #0x1234
\tmov x11, #0x9c2
\tpacda x0, x11
\tautda x0, x11
\tret
";
        let p = parse(text);
        let run = run_architectural(&p, "main", &[], &SimConfig::default()).unwrap();
        assert_eq!(run.outcome, Outcome::Returned);
        assert_eq!(run.state.regs[0], 0x1234);
    }

    #[test]
    fn guarded_indirect_branch_to_non_bti_faults() {
        // The program carries a bti, so it runs with guarded pages; the
        // blr target lacks a landing pad and faults architecturally.
        let text = "\
main:
\tmov x8, =evil
\tblr x8
\tret
evil:
\tmov x0, #1
\tret
good:
\tbti c
\tret
";
        let p = parse(text);
        let run = run_architectural(&p, "main", &[], &SimConfig::default()).unwrap();
        match run.outcome {
            Outcome::Fault(Fault::BtiViolation { .. }) => {}
            other => panic!("expected BTI violation, got {other:?}"),
        }
    }

    #[test]
    fn unguarded_program_skips_bti_checks() {
        let text = "\
main:
\tstr x30, [sp, #8]
\tmov x8, =helper
\tblr x8
\tldr x30, [sp, #8]
\tret
helper:
\tmov x0, #7
\tret
";
        let p = parse(text);
        let run = run_architectural(&p, "main", &[], &SimConfig::default()).unwrap();
        assert_eq!(run.outcome, Outcome::Returned);
        assert_eq!(run.state.regs[0], 7);
    }

    #[test]
    fn speculative_indirect_to_non_bti_squashes_without_target_trace() {
        let text = "\
main:
\tbti c
\tstr x30, [sp, #8]
\tmov x8, =good
\tblr x8
\tldr x30, [sp, #8]
\tmov x0, #0
\tret
good:
\tbti c
\tmov x0, #1
\tret
evil:
\tmov x24, =probe
\tldrb w0, [x24]
\tret

.data
probe:
\t.byte 0x0
";
        let p = parse(text);
        let mistrain = Mistrain::Indirect {
            loc: Loc::new("main", "main", 3),
            target: "evil".to_string(),
        };
        let run =
            run_speculative_episode(&p, "main", &[], Some(&mistrain), &SimConfig::default())
                .unwrap();
        assert_eq!(run.outcome, Outcome::Returned);
        let squashes = run.trace.squashes();
        assert_eq!(squashes.len(), 1);
        assert_eq!(squashes[0].1, SquashCause::BtiMismatch);
        assert!(run.trace.transient_lines().is_empty());
    }

    #[test]
    fn invalid_mistrain_is_rejected() {
        let p = parse("main:\n ret\n");
        let mistrain = Mistrain::Branch {
            loc: Loc::new("main", ".nope", 0),
            taken: true,
        };
        let err = run_speculative_episode(&p, "main", &[], Some(&mistrain), &SimConfig::default())
            .unwrap_err();
        assert!(matches!(err, SimError::InvalidMistrain(_)));
    }

    #[test]
    fn trace_dump_is_stable() {
        let p = parse(V1_GADGET);
        let cfg = SimConfig::default();
        let a = run_architectural(&p, "main", &[], &cfg).unwrap().trace.dump();
        let b = run_architectural(&p, "main", &[], &cfg).unwrap().trace.dump();
        assert_eq!(a, b);
        assert!(a.contains("access arch line"));
    }

    #[test]
    fn registers_init_and_return_value() {
        let p = parse("main:\n add x0, x0, #5\n ret\n");
        let run =
            run_architectural(&p, "main", &[(Reg::X(0), 37)], &SimConfig::default()).unwrap();
        assert_eq!(run.state.regs[0], 42);
    }
}
