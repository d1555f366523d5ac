//! Program structure: locations, basic blocks, functions, data regions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::inst::{Instr, Mnemonic};
use super::ParseError;

/// A program location: `function:block:index`. The index counts original
/// (untagged) instructions within the block, so locations stay stable
/// across instrumentation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Loc {
    pub func: String,
    pub block: String,
    pub index: usize,
}

impl Loc {
    pub fn new(func: impl Into<String>, block: impl Into<String>, index: usize) -> Loc {
        Loc {
            func: func.into(),
            block: block.into(),
            index,
        }
    }
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.func, self.block, self.index)
    }
}

impl FromStr for Loc {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Loc, ParseError> {
        let mut parts = s.rsplitn(2, ':');
        let idx = parts.next().unwrap_or_default();
        let rest = parts.next().unwrap_or_default();
        let (func, block) = rest
            .split_once(':')
            .ok_or_else(|| ParseError::new(0, format!("malformed location '{s}'")))?;
        let index = idx
            .parse()
            .map_err(|_| ParseError::new(0, format!("malformed location index in '{s}'")))?;
        Ok(Loc::new(func, block, index))
    }
}

/// A basic block. The terminator is the final instruction when it is a
/// control transfer; otherwise the block falls through to the next one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub label: String,
    pub instrs: Vec<Instr>,
}

impl BasicBlock {
    pub fn new(label: impl Into<String>) -> BasicBlock {
        BasicBlock {
            label: label.into(),
            instrs: Vec::new(),
        }
    }

    pub fn terminator(&self) -> Option<&Instr> {
        self.instrs.last().filter(|i| i.is_control_transfer())
    }

    /// True when control reaches the lexically next block.
    pub fn falls_through(&self) -> bool {
        match self.terminator() {
            None => true,
            Some(t) => matches!(t.mnemonic, Mnemonic::BCond | Mnemonic::Bl | Mnemonic::Blr),
        }
    }

    /// Index of the `idx`-th original (untagged) instruction, skipping
    /// instrumentation-tagged ones. Used to resolve pre-hardening locations
    /// inside a hardened block.
    pub fn original_index(&self, idx: usize) -> Option<usize> {
        self.instrs
            .iter()
            .enumerate()
            .filter(|(_, i)| i.meta.is_none())
            .nth(idx)
            .map(|(pos, _)| pos)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsmFunction {
    pub name: String,
    pub blocks: Vec<BasicBlock>,
    /// Label of the entry block (always the first block).
    pub entry: String,
    /// Declared with `.global`.
    pub exported: bool,
}

impl AsmFunction {
    pub fn block(&self, label: &str) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_mut(&mut self, label: &str) -> Option<&mut BasicBlock> {
        self.blocks.iter_mut().find(|b| b.label == label)
    }

    pub fn block_position(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    /// A leaf function contains no calls.
    pub fn is_leaf(&self) -> bool {
        !self.blocks.iter().any(|b| {
            b.instrs
                .iter()
                .any(|i| matches!(i.mnemonic, Mnemonic::Bl | Mnemonic::Blr))
        })
    }

    /// Iterate `(loc, instr)` over original (untagged) instructions.
    pub fn locs(&self) -> impl Iterator<Item = (Loc, &Instr)> {
        self.blocks.iter().flat_map(move |b| {
            b.instrs
                .iter()
                .filter(|i| i.meta.is_none())
                .enumerate()
                .map(move |(idx, i)| (Loc::new(self.name.clone(), b.label.clone(), idx), i))
        })
    }
}

/// One item in a data region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataItem {
    Byte(u8),
    Quad(u64),
    /// `.quad symbol` — resolved to the symbol's address at load time.
    QuadSym(String),
}

impl DataItem {
    pub fn size(&self) -> u64 {
        match self {
            DataItem::Byte(_) => 1,
            DataItem::Quad(_) | DataItem::QuadSym(_) => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRegion {
    pub name: String,
    pub items: Vec<DataItem>,
}

impl DataRegion {
    pub fn byte_len(&self) -> u64 {
        self.items.iter().map(DataItem::size).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AsmProgram {
    pub functions: Vec<AsmFunction>,
    pub data: Vec<DataRegion>,
}

impl AsmProgram {
    pub fn function(&self, name: &str) -> Option<&AsmFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_mut(&mut self, name: &str) -> Option<&mut AsmFunction> {
        self.functions.iter_mut().find(|f| f.name == name)
    }

    pub fn region(&self, name: &str) -> Option<&DataRegion> {
        self.data.iter().find(|d| d.name == name)
    }

    /// The original (untagged) instruction at `loc`.
    pub fn instr_at(&self, loc: &Loc) -> Option<&Instr> {
        let block = self.function(&loc.func)?.block(&loc.block)?;
        let pos = block.original_index(loc.index)?;
        block.instrs.get(pos)
    }

    /// Iterate `(loc, instr)` over all original instructions, in program order.
    pub fn locs(&self) -> impl Iterator<Item = (Loc, &Instr)> {
        self.functions.iter().flat_map(|f| f.locs())
    }

    /// Total instruction count, instrumentation included.
    pub fn instr_count(&self) -> usize {
        self.functions
            .iter()
            .flat_map(|f| &f.blocks)
            .map(|b| b.instrs.len())
            .sum()
    }

    /// Function names whose address is taken via `=symbol` operands or
    /// `.quad symbol` data items.
    pub fn address_taken_functions(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |name: &str| {
            if self.function(name).is_some() && !out.iter().any(|n| n == name) {
                out.push(name.to_string());
            }
        };
        for f in &self.functions {
            for b in &f.blocks {
                for i in &b.instrs {
                    for op in &i.operands {
                        if let super::inst::Operand::SymAddr(s) = op {
                            push(s);
                        }
                    }
                }
            }
        }
        for d in &self.data {
            for item in &d.items {
                if let DataItem::QuadSym(s) = item {
                    push(s);
                }
            }
        }
        out.sort();
        out
    }

    /// True when the program carries any BTI landing pads, which marks it
    /// as built for guarded pages: the simulator then enforces BTI checks.
    pub fn has_bti(&self) -> bool {
        self.functions
            .iter()
            .flat_map(|f| &f.blocks)
            .flat_map(|b| &b.instrs)
            .any(|i| i.mnemonic == Mnemonic::Bti)
    }
}
