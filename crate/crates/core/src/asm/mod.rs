//! Parsing, structure, CFG construction, and re-emission for the
//! supported ARM64 assembly subset.

mod cfg;
mod emitter;
mod inst;
mod parser;
mod program;

pub use cfg::{build_cfg, Cfg, Edge, EdgeKind};
pub use emitter::emit_program;
pub use inst::{
    BtiMode, Cond, Instr, Mechanism, MemAddr, MemOffset, Mnemonic, Operand, Reg, LR,
};
pub use parser::{parse_instr, parse_program, Parsed, ParseWarning};
pub use program::{AsmFunction, AsmProgram, BasicBlock, DataItem, DataRegion, Loc};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

impl ParseError {
    pub fn new(line: usize, reason: impl Into<String>) -> ParseError {
        ParseError {
            line,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmitError {
    #[error("unresolvable label '{label}' referenced from function '{func}'")]
    UnresolvedLabel { label: String, func: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG_SHAPE: &str = "\
.global victim
victim:
.bb1:
\tmov x20, =input
\tldr x9, [x20]
\tmov x21, =bound
\tldr x1, [x21]
\tb .bb2
.bb2:
\tstr x9, [sp, #8]
\tb .bb3
.bb3:
\tldr x9, [sp, #8]
\tcmp x9, x1
\tb.ge .bb5
.bb4:
\tmov x22, =arr
\tldrb w10, [x22, x9]
\tmov x23, =probe
\tlsl x10, x10, #6
\tldrb w11, [x23, x10]
\tb .bb6
.bb5:
\tmov x10, #0
\tb .bb6
.bb6:
\tmov x24, =handlers
\tldr x8, [x24]
\tblr x8
.bb7:
\tret

.data
input:
\t.byte 0x2
bound:
\t.quad 0x4
arr:
\t.byte 0x1, 0x2, 0x3, 0x4
probe:
\t.byte 0x0
handlers:
\t.quad victim
";

    #[test]
    fn parses_minimal_function() {
        let parsed = parse_program("f:\n mov x11, #0x9c2\n ret\n").unwrap();
        let p = parsed.program;
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.functions[0].blocks.len(), 1);
        assert_eq!(p.functions[0].blocks[0].instrs.len(), 2);
        assert_eq!(
            p.functions[0].blocks[0].instrs[0],
            Instr::new(
                Mnemonic::Mov,
                vec![Operand::Reg(Reg::X(11)), Operand::Imm(0x9c2)]
            )
        );
    }

    #[test]
    fn empty_input_gives_empty_program() {
        let parsed = parse_program("").unwrap();
        assert!(parsed.program.functions.is_empty());
        assert!(parsed.program.data.is_empty());
    }

    #[test]
    fn seven_block_shape_cfg_edges() {
        let parsed = parse_program(FIG_SHAPE).unwrap();
        let f = parsed.program.function("victim").unwrap();
        let cfg = build_cfg(f);
        // Hand-constructed expectation for the conditional-branch block.
        assert_eq!(
            cfg.successors(".bb3"),
            &[
                Edge {
                    target: Some(".bb5".into()),
                    kind: EdgeKind::CondTaken
                },
                Edge {
                    target: Some(".bb4".into()),
                    kind: EdgeKind::Fallthrough
                },
            ]
        );
        let cond_edges: usize = cfg
            .succs
            .values()
            .flatten()
            .filter(|e| matches!(e.kind, EdgeKind::CondTaken | EdgeKind::Fallthrough))
            .count();
        assert_eq!(cond_edges, 2);
        let unresolved: usize = cfg
            .succs
            .values()
            .flatten()
            .filter(|e| e.target.is_none())
            .count();
        assert_eq!(unresolved, 1);
        assert!(cfg.has_unresolved(".bb6"));
    }

    #[test]
    fn blr_gets_unresolved_plus_continuation() {
        let parsed = parse_program("f:\n.bb1:\n blr x8\n.bb2:\n ret\n").unwrap();
        let f = parsed.program.function("f").unwrap();
        let cfg = build_cfg(f);
        let edges = cfg.successors(".bb1");
        assert_eq!(edges.len(), 2);
        assert!(edges[0].target.is_none());
        assert_eq!(edges[1], Edge {
            target: Some(".bb2".into()),
            kind: EdgeKind::CallContinuation
        });
    }

    #[test]
    fn ret_block_has_no_edges() {
        let parsed = parse_program("f:\n ret\n").unwrap();
        let f = parsed.program.function("f").unwrap();
        let cfg = build_cfg(f);
        assert!(cfg.successors("f").is_empty());
    }

    #[test]
    fn round_trip_is_structural_identity() {
        let parsed = parse_program(FIG_SHAPE).unwrap();
        let text = emit_program(&parsed.program).unwrap();
        let reparsed = parse_program(&text).unwrap();
        assert_eq!(parsed.program, reparsed.program);
        assert!(reparsed.warnings.is_empty());
    }

    #[test]
    fn provenance_comment_round_trips() {
        let mut parsed = parse_program("f:\n ret\n").unwrap();
        let block = &mut parsed.program.functions[0].blocks[0];
        block.instrs.insert(
            0,
            Instr::tagged(
                Mnemonic::Bti,
                vec![Operand::Bti(BtiMode::C)],
                Mechanism::E,
            ),
        );
        let text = emit_program(&parsed.program).unwrap();
        assert!(text.contains("bti c // janus:E"));
        let reparsed = parse_program(&text).unwrap();
        assert_eq!(
            reparsed.program.functions[0].blocks[0].instrs[0].meta,
            Some(Mechanism::E)
        );
    }

    #[test]
    fn unknown_mnemonic_rejected() {
        let err = parse_program("f:\n fmul d0, d1, d2\n").unwrap_err();
        assert!(err.reason.contains("unknown mnemonic"));
        assert_eq!(err.line, 2);
    }

    #[test]
    fn duplicate_label_rejected() {
        let err = parse_program("f:\n.bb1:\n nop\n.bb1:\n ret\n").unwrap_err();
        assert!(err.reason.contains("duplicate block label"));
    }

    #[test]
    fn unresolved_local_label_rejected() {
        let err = parse_program("f:\n b .nowhere\n").unwrap_err();
        assert!(err.reason.contains("unresolved local label"));
    }

    #[test]
    fn emit_rejects_dangling_symbol_references() {
        let mut parsed = parse_program("f:\n mov x0, =blob\n ret\n.data\nblob:\n .byte 0x1\n").unwrap();
        parsed.program.data.clear();
        let err = emit_program(&parsed.program).unwrap_err();
        assert!(matches!(err, EmitError::UnresolvedLabel { .. }));
    }

    #[test]
    fn unknown_directive_warns() {
        let parsed = parse_program(".align 4\nf:\n ret\n").unwrap();
        assert_eq!(parsed.warnings.len(), 1);
        assert!(parsed.warnings[0].message.contains(".align"));
    }

    #[test]
    fn control_transfer_splits_blocks() {
        let parsed = parse_program("f:\n nop\n bl g\n nop\n ret\ng:\n ret\n").unwrap();
        let f = parsed.program.function("f").unwrap();
        assert_eq!(f.blocks.len(), 2);
        assert!(f.blocks[1].label.starts_with(".Lsynth"));
        assert!(!f.is_leaf());
        assert!(parsed.program.function("g").unwrap().is_leaf());
    }

    #[test]
    fn w_registers_alias_x() {
        let parsed = parse_program("f:\n ldrb w9, [x0]\n ret\n").unwrap();
        let i = &parsed.program.functions[0].blocks[0].instrs[0];
        assert_eq!(i.operands[0], Operand::Reg(Reg::X(9)));
    }

    #[test]
    fn mov_immediate_width_is_enforced() {
        assert!(parse_program("f:\n mov x0, #0x10000\n ret\n").is_err());
        assert!(parse_program("f:\n mov x0, #0xffff\n ret\n").is_ok());
    }
}
