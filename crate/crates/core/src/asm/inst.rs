//! Instruction vocabulary: registers, condition codes, mnemonics, operands.
//!
//! The supported subset is closed by design so that the validator and the
//! simulator can be total over it. Anything outside the subset is rejected
//! at parse time.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A general-purpose register. `X(30)` doubles as the link register and
/// `lr` parses to it; `wN` parses to the same register as `xN` (byte loads
/// zero-extend into the full register in this model).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Reg {
    X(u8),
    Sp,
    Xzr,
}

pub const LR: Reg = Reg::X(30);

impl Reg {
    pub fn parse(s: &str) -> Option<Reg> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "sp" => return Some(Reg::Sp),
            "xzr" | "wzr" => return Some(Reg::Xzr),
            "lr" => return Some(LR),
            _ => {}
        }
        let (prefix, num) = lower.split_at(1);
        if prefix != "x" && prefix != "w" {
            return None;
        }
        let n: u8 = num.parse().ok()?;
        if n <= 30 {
            Some(Reg::X(n))
        } else {
            None
        }
    }

    pub fn name(&self) -> String {
        match self {
            Reg::X(n) => format!("x{n}"),
            Reg::Sp => "sp".to_string(),
            Reg::Xzr => "xzr".to_string(),
        }
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Condition codes for `b.<cond>` and `csel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cond {
    Eq,
    Ne,
    Cs,
    Cc,
    Mi,
    Pl,
    Vs,
    Vc,
    Hi,
    Ls,
    Ge,
    Lt,
    Gt,
    Le,
}

impl Cond {
    pub fn parse(s: &str) -> Option<Cond> {
        Some(match s.to_ascii_lowercase().as_str() {
            "eq" => Cond::Eq,
            "ne" => Cond::Ne,
            "cs" | "hs" => Cond::Cs,
            "cc" | "lo" => Cond::Cc,
            "mi" => Cond::Mi,
            "pl" => Cond::Pl,
            "vs" => Cond::Vs,
            "vc" => Cond::Vc,
            "hi" => Cond::Hi,
            "ls" => Cond::Ls,
            "ge" => Cond::Ge,
            "lt" => Cond::Lt,
            "gt" => Cond::Gt,
            "le" => Cond::Le,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Cond::Eq => "eq",
            Cond::Ne => "ne",
            Cond::Cs => "cs",
            Cond::Cc => "cc",
            Cond::Mi => "mi",
            Cond::Pl => "pl",
            Cond::Vs => "vs",
            Cond::Vc => "vc",
            Cond::Hi => "hi",
            Cond::Ls => "ls",
            Cond::Ge => "ge",
            Cond::Lt => "lt",
            Cond::Gt => "gt",
            Cond::Le => "le",
        }
    }

    /// The condition that holds exactly when `self` does not.
    pub fn invert(&self) -> Cond {
        match self {
            Cond::Eq => Cond::Ne,
            Cond::Ne => Cond::Eq,
            Cond::Cs => Cond::Cc,
            Cond::Cc => Cond::Cs,
            Cond::Mi => Cond::Pl,
            Cond::Pl => Cond::Mi,
            Cond::Vs => Cond::Vc,
            Cond::Vc => Cond::Vs,
            Cond::Hi => Cond::Ls,
            Cond::Ls => Cond::Hi,
            Cond::Ge => Cond::Lt,
            Cond::Lt => Cond::Ge,
            Cond::Gt => Cond::Le,
            Cond::Le => Cond::Gt,
        }
    }
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Operand of a `bti` landing pad: which indirect-branch kinds may target it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BtiMode {
    /// Call targets (`blr`).
    C,
    /// Jump targets (`br`).
    J,
    /// Both.
    Jc,
}

impl BtiMode {
    pub fn parse(s: &str) -> Option<BtiMode> {
        Some(match s.to_ascii_lowercase().as_str() {
            "c" => BtiMode::C,
            "j" => BtiMode::J,
            "jc" => BtiMode::Jc,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            BtiMode::C => "c",
            BtiMode::J => "j",
            BtiMode::Jc => "jc",
        }
    }

    pub fn accepts_call(&self) -> bool {
        matches!(self, BtiMode::C | BtiMode::Jc)
    }

    pub fn accepts_jump(&self) -> bool {
        matches!(self, BtiMode::J | BtiMode::Jc)
    }
}

/// The closed mnemonic set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mnemonic {
    Mov,
    Movk,
    Add,
    Sub,
    And,
    Orr,
    Eor,
    Lsl,
    Lsr,
    Cmp,
    Csel,
    Ldr,
    Ldrb,
    Str,
    Strb,
    B,
    BCond,
    Br,
    Bl,
    Blr,
    Ret,
    Bti,
    Pacia,
    Pacda,
    Autia,
    Autda,
    Paciasp,
    Autiasp,
    Nop,
}

impl Mnemonic {
    /// Parses a mnemonic token; `b.<cond>` returns `(BCond, Some(cond))`.
    pub fn parse(s: &str) -> Option<(Mnemonic, Option<Cond>)> {
        let lower = s.to_ascii_lowercase();
        if let Some(cond) = lower.strip_prefix("b.") {
            return Cond::parse(cond).map(|c| (Mnemonic::BCond, Some(c)));
        }
        let m = match lower.as_str() {
            "mov" => Mnemonic::Mov,
            "movk" => Mnemonic::Movk,
            "add" => Mnemonic::Add,
            "sub" => Mnemonic::Sub,
            "and" => Mnemonic::And,
            "orr" => Mnemonic::Orr,
            "eor" => Mnemonic::Eor,
            "lsl" => Mnemonic::Lsl,
            "lsr" => Mnemonic::Lsr,
            "cmp" => Mnemonic::Cmp,
            "csel" => Mnemonic::Csel,
            "ldr" => Mnemonic::Ldr,
            "ldrb" => Mnemonic::Ldrb,
            "str" => Mnemonic::Str,
            "strb" => Mnemonic::Strb,
            "b" => Mnemonic::B,
            "br" => Mnemonic::Br,
            "bl" => Mnemonic::Bl,
            "blr" => Mnemonic::Blr,
            "ret" => Mnemonic::Ret,
            "bti" => Mnemonic::Bti,
            "pacia" => Mnemonic::Pacia,
            "pacda" => Mnemonic::Pacda,
            "autia" => Mnemonic::Autia,
            "autda" => Mnemonic::Autda,
            "paciasp" => Mnemonic::Paciasp,
            "autiasp" => Mnemonic::Autiasp,
            "nop" => Mnemonic::Nop,
            _ => return None,
        };
        Some((m, None))
    }

    /// True for instructions that terminate a basic block.
    pub fn is_control_transfer(&self) -> bool {
        matches!(
            self,
            Mnemonic::B
                | Mnemonic::BCond
                | Mnemonic::Br
                | Mnemonic::Bl
                | Mnemonic::Blr
                | Mnemonic::Ret
        )
    }

    pub fn is_pac_sign(&self) -> bool {
        matches!(self, Mnemonic::Pacia | Mnemonic::Pacda | Mnemonic::Paciasp)
    }

    pub fn is_pac_auth(&self) -> bool {
        matches!(self, Mnemonic::Autia | Mnemonic::Autda | Mnemonic::Autiasp)
    }
}

/// The five defense mechanisms, used as instruction provenance tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    /// BTI landing pads on indirect-call targets.
    A,
    /// PA-backed fine-grained CFI at call sites and target entries.
    B,
    /// PA data integrity for DOP-sensitive variables (sign source, verify sink).
    C,
    /// Authentication ordering: verify before any dependent use or exposure.
    D,
    /// Conditional PA modifier encoding the true branch outcome.
    E,
}

impl Mechanism {
    pub fn parse(s: &str) -> Option<Mechanism> {
        Some(match s {
            "A" => Mechanism::A,
            "B" => Mechanism::B,
            "C" => Mechanism::C,
            "D" => Mechanism::D,
            "E" => Mechanism::E,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::A => "A",
            Mechanism::B => "B",
            Mechanism::C => "C",
            Mechanism::D => "D",
            Mechanism::E => "E",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A memory operand: `[base, #imm]` or `[base, index]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemAddr {
    pub base: Reg,
    pub offset: MemOffset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MemOffset {
    Imm(u32),
    Reg(Reg),
}

impl fmt::Display for MemAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.offset {
            MemOffset::Imm(0) => write!(f, "[{}]", self.base),
            MemOffset::Imm(i) => write!(f, "[{}, #{i}]", self.base),
            MemOffset::Reg(r) => write!(f, "[{}, {r}]", self.base),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Reg(Reg),
    /// Immediate; width checked per mnemonic at parse time.
    Imm(u64),
    /// `lsl #n` shift suffix on `movk`.
    Shift(u8),
    /// Branch target or `.quad` symbol reference.
    Label(String),
    /// `=symbol` address-of a data region or function.
    SymAddr(String),
    Cond(Cond),
    Mem(MemAddr),
    Bti(BtiMode),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => {
                if *v > 9 {
                    write!(f, "#{v:#x}")
                } else {
                    write!(f, "#{v}")
                }
            }
            Operand::Shift(n) => write!(f, "lsl #{n}"),
            Operand::Label(l) => write!(f, "{l}"),
            Operand::SymAddr(s) => write!(f, "={s}"),
            Operand::Cond(c) => write!(f, "{c}"),
            Operand::Mem(m) => write!(f, "{m}"),
            Operand::Bti(b) => write!(f, "{}", b.name()),
        }
    }
}

/// One instruction plus its optional instrumentation provenance tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instr {
    pub mnemonic: Mnemonic,
    pub operands: Vec<Operand>,
    /// Which mechanism inserted this instruction, if any. Emitted as a
    /// trailing `// janus:<M>` comment and round-tripped by the parser.
    pub meta: Option<Mechanism>,
}

impl Instr {
    pub fn new(mnemonic: Mnemonic, operands: Vec<Operand>) -> Instr {
        Instr {
            mnemonic,
            operands,
            meta: None,
        }
    }

    pub fn tagged(mnemonic: Mnemonic, operands: Vec<Operand>, mech: Mechanism) -> Instr {
        Instr {
            mnemonic,
            operands,
            meta: Some(mech),
        }
    }

    pub fn is_control_transfer(&self) -> bool {
        self.mnemonic.is_control_transfer()
    }

    /// Branch target label for direct branches.
    pub fn branch_target(&self) -> Option<&str> {
        match self.mnemonic {
            Mnemonic::B | Mnemonic::Bl => match self.operands.first() {
                Some(Operand::Label(l)) => Some(l),
                _ => None,
            },
            Mnemonic::BCond => match self.operands.get(1) {
                Some(Operand::Label(l)) => Some(l),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn cond(&self) -> Option<Cond> {
        self.operands.iter().find_map(|op| match op {
            Operand::Cond(c) => Some(*c),
            _ => None,
        })
    }

    /// Registers this instruction writes.
    pub fn defs(&self) -> Vec<Reg> {
        use Mnemonic::*;
        let dst = || match self.operands.first() {
            Some(Operand::Reg(r)) if *r != Reg::Xzr => vec![*r],
            _ => vec![],
        };
        match self.mnemonic {
            Mov | Movk | Add | Sub | And | Orr | Eor | Lsl | Lsr | Csel | Ldr | Ldrb => dst(),
            Pacia | Pacda | Autia | Autda => dst(),
            Paciasp | Autiasp => vec![LR],
            Bl | Blr => {
                // Caller-saved registers are clobbered by a call.
                let mut v: Vec<Reg> = (0..=17).map(Reg::X).collect();
                v.push(LR);
                v
            }
            _ => vec![],
        }
    }

    /// Registers this instruction reads.
    pub fn uses(&self) -> Vec<Reg> {
        use Mnemonic::*;
        let mut out = Vec::new();
        let mut push = |r: Reg| {
            if r != Reg::Xzr && !out.contains(&r) {
                out.push(r);
            }
        };
        let reg_at = |i: usize| match self.operands.get(i) {
            Some(Operand::Reg(r)) => Some(*r),
            _ => None,
        };
        match self.mnemonic {
            Mov => {
                if let Some(r) = reg_at(1) {
                    push(r);
                }
            }
            Movk => {
                if let Some(r) = reg_at(0) {
                    push(r); // movk keeps the other bits of the destination
                }
            }
            Add | Sub | And | Orr | Eor | Lsl | Lsr => {
                if let Some(r) = reg_at(1) {
                    push(r);
                }
                if let Some(r) = reg_at(2) {
                    push(r);
                }
            }
            Cmp => {
                if let Some(r) = reg_at(0) {
                    push(r);
                }
                if let Some(r) = reg_at(1) {
                    push(r);
                }
            }
            Csel => {
                if let Some(r) = reg_at(1) {
                    push(r);
                }
                if let Some(r) = reg_at(2) {
                    push(r);
                }
            }
            Ldr | Ldrb => {
                if let Some(Operand::Mem(m)) = self.operands.get(1) {
                    push(m.base);
                    if let MemOffset::Reg(r) = m.offset {
                        push(r);
                    }
                }
            }
            Str | Strb => {
                if let Some(r) = reg_at(0) {
                    push(r);
                }
                if let Some(Operand::Mem(m)) = self.operands.get(1) {
                    push(m.base);
                    if let MemOffset::Reg(r) = m.offset {
                        push(r);
                    }
                }
            }
            Br | Blr => {
                if let Some(r) = reg_at(0) {
                    push(r);
                }
                if self.mnemonic == Blr {
                    // Argument registers are live into a call.
                    for n in 0..=7 {
                        push(Reg::X(n));
                    }
                }
            }
            Bl => {
                for n in 0..=7 {
                    push(Reg::X(n));
                }
            }
            Ret => {
                push(LR);
                push(Reg::X(0));
            }
            Pacia | Pacda | Autia | Autda => {
                if let Some(r) = reg_at(0) {
                    push(r);
                }
                if let Some(r) = reg_at(1) {
                    push(r);
                }
            }
            Paciasp | Autiasp => {
                push(LR);
                push(Reg::Sp);
            }
            B | BCond | Bti | Nop => {}
        }
        out
    }

    /// The memory operand, if this is a load or store.
    pub fn mem_operand(&self) -> Option<&MemAddr> {
        match self.mnemonic {
            Mnemonic::Ldr | Mnemonic::Ldrb | Mnemonic::Str | Mnemonic::Strb => {
                match self.operands.get(1) {
                    Some(Operand::Mem(m)) => Some(m),
                    _ => None,
                }
            }
            _ => None,
        }
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.mnemonic {
            Mnemonic::BCond => {
                let cond = self.cond().map(|c| c.name()).unwrap_or("??");
                return write_rest(f, &format!("b.{cond}"), &self.operands[1..], self.meta);
            }
            Mnemonic::Mov => "mov",
            Mnemonic::Movk => "movk",
            Mnemonic::Add => "add",
            Mnemonic::Sub => "sub",
            Mnemonic::And => "and",
            Mnemonic::Orr => "orr",
            Mnemonic::Eor => "eor",
            Mnemonic::Lsl => "lsl",
            Mnemonic::Lsr => "lsr",
            Mnemonic::Cmp => "cmp",
            Mnemonic::Csel => "csel",
            Mnemonic::Ldr => "ldr",
            Mnemonic::Ldrb => "ldrb",
            Mnemonic::Str => "str",
            Mnemonic::Strb => "strb",
            Mnemonic::B => "b",
            Mnemonic::Br => "br",
            Mnemonic::Bl => "bl",
            Mnemonic::Blr => "blr",
            Mnemonic::Ret => "ret",
            Mnemonic::Bti => "bti",
            Mnemonic::Pacia => "pacia",
            Mnemonic::Pacda => "pacda",
            Mnemonic::Autia => "autia",
            Mnemonic::Autda => "autda",
            Mnemonic::Paciasp => "paciasp",
            Mnemonic::Autiasp => "autiasp",
            Mnemonic::Nop => "nop",
        };
        write_rest(f, name, &self.operands, self.meta)
    }
}

fn write_rest(
    f: &mut fmt::Formatter<'_>,
    name: &str,
    operands: &[Operand],
    meta: Option<Mechanism>,
) -> fmt::Result {
    write!(f, "{name}")?;
    // Byte accesses conventionally name the 32-bit view of their register.
    let w_form = matches!(name, "ldrb" | "strb");
    for (i, op) in operands.iter().enumerate() {
        let sep = if i == 0 { " " } else { ", " };
        match op {
            Operand::Reg(Reg::X(n)) if i == 0 && w_form => write!(f, "{sep}w{n}")?,
            _ => write!(f, "{sep}{op}")?,
        }
    }
    if let Some(m) = meta {
        write!(f, " // janus:{m}")?;
    }
    Ok(())
}
