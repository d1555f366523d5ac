//! Machine state and the loaded program image.
//!
//! The image flattens a program into an instruction array with synthetic
//! code addresses (4 bytes per instruction) and lays data regions out at
//! fixed 32 KiB-aligned slots, so every run of the same program sees the
//! same addresses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::asm::{AsmProgram, DataItem, Instr, Loc};

pub const CODE_BASE: u64 = 0x0040_0000;
pub const DATA_BASE: u64 = 0x1000_0000;
/// Slot pitch per data region; large enough for a 256-line probe array.
pub const REGION_SLOT: u64 = 0x8000;
pub const STACK_BASE: u64 = 0x7ffe_0000;
pub const STACK_TOP: u64 = 0x7fff_0000;
/// Initial link-register value; returning here ends the run.
pub const RETURN_SENTINEL: u64 = 0xffff_ff00;
pub const CACHE_LINE: u64 = 64;

#[derive(Debug, Clone)]
pub struct FlatInstr {
    pub instr: Instr,
    pub loc: Loc,
    pub addr: u64,
}

/// A program loaded at fixed addresses.
#[derive(Debug, Clone)]
pub struct Image {
    pub instrs: Vec<FlatInstr>,
    /// Function name -> entry address.
    pub func_addrs: BTreeMap<String, u64>,
    /// "func:block" -> block start address.
    pub block_addrs: BTreeMap<String, u64>,
    /// Region name -> base address.
    pub region_addrs: BTreeMap<String, u64>,
    /// Region name -> declared byte length.
    pub region_lens: BTreeMap<String, u64>,
    /// Initial contents of the data segment.
    pub initial_data: BTreeMap<u64, u8>,
    /// Whether BTI landing-pad checks are enforced (guarded pages).
    pub guarded: bool,
}

impl Image {
    pub fn load(p: &AsmProgram) -> Image {
        let mut region_addrs = BTreeMap::new();
        let mut region_lens = BTreeMap::new();
        for (i, d) in p.data.iter().enumerate() {
            region_addrs.insert(d.name.clone(), DATA_BASE + REGION_SLOT * i as u64);
            region_lens.insert(d.name.clone(), d.byte_len());
        }

        let mut instrs = Vec::new();
        let mut func_addrs = BTreeMap::new();
        let mut block_addrs = BTreeMap::new();
        let mut addr = CODE_BASE;
        for f in &p.functions {
            func_addrs.insert(f.name.clone(), addr);
            for b in &f.blocks {
                block_addrs.insert(format!("{}:{}", f.name, b.label), addr);
                // Locations count original (untagged) instructions, so a
                // pre-hardening loc still names the same instruction after
                // instrumentation; inserted instructions share the index of
                // the original that follows them.
                let mut orig_idx = 0usize;
                for instr in &b.instrs {
                    instrs.push(FlatInstr {
                        instr: instr.clone(),
                        loc: Loc::new(f.name.clone(), b.label.clone(), orig_idx),
                        addr,
                    });
                    if instr.meta.is_none() {
                        orig_idx += 1;
                    }
                    addr += 4;
                }
            }
        }

        let mut initial_data = BTreeMap::new();
        for d in &p.data {
            let mut at = region_addrs[&d.name];
            for item in &d.items {
                match item {
                    DataItem::Byte(v) => {
                        initial_data.insert(at, *v);
                        at += 1;
                    }
                    DataItem::Quad(v) => {
                        for (k, byte) in v.to_le_bytes().iter().enumerate() {
                            initial_data.insert(at + k as u64, *byte);
                        }
                        at += 8;
                    }
                    DataItem::QuadSym(s) => {
                        let target = func_addrs
                            .get(s)
                            .or_else(|| region_addrs.get(s))
                            .copied()
                            .unwrap_or(0);
                        for (k, byte) in target.to_le_bytes().iter().enumerate() {
                            initial_data.insert(at + k as u64, *byte);
                        }
                        at += 8;
                    }
                }
            }
        }

        Image {
            instrs,
            func_addrs,
            block_addrs,
            region_addrs,
            region_lens,
            initial_data,
            guarded: p.has_bti(),
        }
    }

    pub fn instr_at_addr(&self, addr: u64) -> Option<&FlatInstr> {
        if addr < CODE_BASE || !(addr - CODE_BASE).is_multiple_of(4) {
            return None;
        }
        self.instrs.get(((addr - CODE_BASE) / 4) as usize)
    }

    /// Resolve a code label: a function name or `func:block`.
    pub fn code_addr(&self, label: &str) -> Option<u64> {
        self.func_addrs
            .get(label)
            .or_else(|| self.block_addrs.get(label))
            .copied()
    }

    /// Address of `region`, or `region+off`.
    pub fn data_addr(&self, spec: &str) -> Option<u64> {
        let (name, off) = match spec.split_once('+') {
            Some((n, o)) => {
                let off = if let Some(hex) = o.trim().strip_prefix("0x") {
                    u64::from_str_radix(hex, 16).ok()?
                } else {
                    o.trim().parse().ok()?
                };
                (n.trim(), off)
            }
            None => (spec.trim(), 0),
        };
        self.region_addrs.get(name).map(|base| base + off)
    }

    /// Whether `addr` falls inside any data-region slot or the stack zone.
    fn addr_mapped(&self, addr: u64) -> bool {
        if (STACK_BASE..STACK_TOP).contains(&addr) {
            return true;
        }
        if self.region_addrs.is_empty() {
            return false;
        }
        let end = DATA_BASE + REGION_SLOT * self.region_addrs.len() as u64;
        (DATA_BASE..end).contains(&addr)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nzcv {
    pub n: bool,
    pub z: bool,
    pub c: bool,
    pub v: bool,
}

/// Execution mode. Speculative mode carries the remaining transient budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Architectural,
    Speculative { depth: u32, budget: u32 },
}

#[derive(Debug, Clone)]
pub struct MachineState {
    /// x0–x30.
    pub regs: [u64; 31],
    pub sp: u64,
    pub pc: u64,
    pub flags: Nzcv,
    pub mem: BTreeMap<u64, u8>,
    pub pa_key: u128,
    pub mode: Mode,
}

impl MachineState {
    pub fn new(image: &Image, pa_key: u128) -> MachineState {
        MachineState {
            regs: [0; 31],
            sp: STACK_TOP - 0x100,
            pc: 0,
            flags: Nzcv::default(),
            mem: image.initial_data.clone(),
            pa_key,
            mode: Mode::Architectural,
        }
    }

    pub fn read_reg(&self, r: crate::asm::Reg) -> u64 {
        match r {
            crate::asm::Reg::X(n) => self.regs[n as usize],
            crate::asm::Reg::Sp => self.sp,
            crate::asm::Reg::Xzr => 0,
        }
    }

    pub fn write_reg(&mut self, r: crate::asm::Reg, v: u64) {
        match r {
            crate::asm::Reg::X(n) => self.regs[n as usize] = v,
            crate::asm::Reg::Sp => self.sp = v,
            crate::asm::Reg::Xzr => {}
        }
    }

    pub fn read_mem(&self, image: &Image, addr: u64, len: u64) -> Option<u64> {
        let mut out: u64 = 0;
        for i in 0..len {
            let a = addr + i;
            let byte = match self.mem.get(&a) {
                Some(b) => *b,
                None if image.addr_mapped(a) => 0,
                None => return None,
            };
            out |= (byte as u64) << (8 * i);
        }
        Some(out)
    }

    pub fn write_mem(&mut self, image: &Image, addr: u64, len: u64, value: u64) -> bool {
        for i in 0..len {
            let a = addr + i;
            if !self.mem.contains_key(&a) && !image.addr_mapped(a) {
                return false;
            }
        }
        for i in 0..len {
            self.mem.insert(addr + i, (value >> (8 * i)) as u8);
        }
        true
    }

    /// Set NZCV from `a - b` (the `cmp` semantics).
    pub fn set_flags_sub(&mut self, a: u64, b: u64) {
        let (result, borrow) = a.overflowing_sub(b);
        self.flags.n = (result as i64) < 0;
        self.flags.z = result == 0;
        self.flags.c = !borrow;
        self.flags.v = ((a ^ b) & (a ^ result)) >> 63 != 0;
    }

    pub fn cond_holds(&self, c: crate::asm::Cond) -> bool {
        use crate::asm::Cond::*;
        let f = self.flags;
        match c {
            Eq => f.z,
            Ne => !f.z,
            Cs => f.c,
            Cc => !f.c,
            Mi => f.n,
            Pl => !f.n,
            Vs => f.v,
            Vc => !f.v,
            Hi => f.c && !f.z,
            Ls => !f.c || f.z,
            Ge => f.n == f.v,
            Lt => f.n != f.v,
            Gt => !f.z && f.n == f.v,
            Le => f.z || f.n != f.v,
        }
    }
}

/// Simulator configuration.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Speculation window: transient instructions per episode.
    pub window: u32,
    /// Architectural step budget per run.
    pub max_steps: u64,
    pub pa_key: u128,
    /// Override the guarded-page auto-detection.
    pub bti_enforced: Option<bool>,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            window: 32,
            max_steps: 100_000,
            pa_key: 0x0102_0304_0506_0708_090a_0b0c_0d0e_0f10,
            bti_enforced: None,
        }
    }
}
