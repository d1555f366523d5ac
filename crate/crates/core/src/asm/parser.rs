//! Line-oriented parser for the supported assembly subset.
//!
//! Grammar summary (the full reference lives in `docs/assembly-format.md`):
//!
//! - one instruction per line; `//` and `;` start comments
//! - `name:` at column start defines a label; labels beginning with `.`
//!   are block labels inside the current function, anything else starts
//!   a new function
//! - `.global <name>` exports a function; `.data` / `.text` switch
//!   sections; `.byte` / `.quad` populate the current data region
//! - directives outside that set are skipped with a warning
//! - `// janus:<M>` trailing comments are instrumentation provenance and
//!   round-trip through parse/emit

use super::inst::{BtiMode, Cond, Instr, Mechanism, MemAddr, MemOffset, Mnemonic, Operand, Reg};
use super::program::{AsmFunction, AsmProgram, BasicBlock, DataItem, DataRegion};
use super::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

/// Successful parse: the program plus non-fatal warnings.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub program: AsmProgram,
    pub warnings: Vec<ParseWarning>,
}

pub fn parse_program(text: &str) -> Result<Parsed, ParseError> {
    Parser::new().run(text)
}

/// Parse a single instruction line (used for plan files).
pub fn parse_instr(text: &str) -> Result<Instr, ParseError> {
    let (body, meta) = split_comment(text);
    let body = body.trim();
    if body.is_empty() {
        return Err(ParseError::new(1, "empty instruction"));
    }
    parse_instr_body(1, body, meta)
}

#[derive(PartialEq)]
enum Section {
    Text,
    Data,
}

struct Parser {
    program: AsmProgram,
    warnings: Vec<ParseWarning>,
    section: Section,
    globals: Vec<String>,
    current_func: Option<AsmFunction>,
    current_block: Option<BasicBlock>,
    current_region: Option<DataRegion>,
    synth_counter: usize,
}

impl Parser {
    fn new() -> Parser {
        Parser {
            program: AsmProgram::default(),
            warnings: Vec::new(),
            section: Section::Text,
            globals: Vec::new(),
            current_func: None,
            current_block: None,
            current_region: None,
            synth_counter: 0,
        }
    }

    fn run(mut self, text: &str) -> Result<Parsed, ParseError> {
        for (n, raw) in text.lines().enumerate() {
            let lineno = n + 1;
            let (body, meta) = split_comment(raw);
            let body = body.trim();
            if body.is_empty() {
                continue;
            }
            if let Some(label) = body.strip_suffix(':') {
                self.handle_label(lineno, label.trim())?;
            } else if body.starts_with('.') {
                self.handle_directive(lineno, body)?;
            } else if self.section == Section::Data {
                return Err(ParseError::new(lineno, "instruction in data section"));
            } else {
                let instr = parse_instr_body(lineno, body, meta)?;
                self.push_instr(lineno, instr)?;
            }
        }
        self.flush_function(0)?;
        self.flush_region();
        let globals = std::mem::take(&mut self.globals);
        self.resolve(&globals)?;
        Ok(Parsed {
            program: self.program,
            warnings: self.warnings,
        })
    }

    fn handle_label(&mut self, lineno: usize, label: &str) -> Result<(), ParseError> {
        if label.is_empty() || label.contains(char::is_whitespace) {
            return Err(ParseError::new(lineno, format!("malformed label '{label}'")));
        }
        match self.section {
            Section::Data => {
                self.flush_region();
                if self.program.region(label).is_some() {
                    return Err(ParseError::new(
                        lineno,
                        format!("duplicate data label '{label}'"),
                    ));
                }
                self.current_region = Some(DataRegion {
                    name: label.to_string(),
                    items: Vec::new(),
                });
            }
            Section::Text => {
                if label.starts_with('.') {
                    let func = self.current_func.as_ref().ok_or_else(|| {
                        ParseError::new(lineno, format!("block label '{label}' outside function"))
                    })?;
                    if func.blocks.iter().any(|b| b.label == label)
                        || self
                            .current_block
                            .as_ref()
                            .is_some_and(|b| b.label == label)
                    {
                        return Err(ParseError::new(
                            lineno,
                            format!("duplicate block label '{label}'"),
                        ));
                    }
                    self.flush_block();
                    self.current_block = Some(BasicBlock::new(label));
                } else {
                    self.flush_function(lineno)?;
                    if self.program.function(label).is_some() {
                        return Err(ParseError::new(
                            lineno,
                            format!("duplicate function label '{label}'"),
                        ));
                    }
                    self.current_func = Some(AsmFunction {
                        name: label.to_string(),
                        blocks: Vec::new(),
                        entry: label.to_string(),
                        exported: false,
                    });
                }
            }
        }
        Ok(())
    }

    fn handle_directive(&mut self, lineno: usize, body: &str) -> Result<(), ParseError> {
        let (dir, rest) = match body.split_once(char::is_whitespace) {
            Some((d, r)) => (d, r.trim()),
            None => (body, ""),
        };
        match dir {
            ".global" | ".globl" => {
                if rest.is_empty() {
                    return Err(ParseError::new(lineno, ".global requires a symbol"));
                }
                self.globals.push(rest.to_string());
            }
            ".data" => {
                self.flush_function(lineno)?;
                self.section = Section::Data;
            }
            ".text" => {
                self.flush_region();
                self.section = Section::Text;
            }
            ".byte" => {
                let region = self.current_region.as_mut().ok_or_else(|| {
                    ParseError::new(lineno, ".byte outside a named data region")
                })?;
                for item in rest.split(',') {
                    let v = parse_u64(item.trim())
                        .ok_or_else(|| ParseError::new(lineno, format!("bad byte '{item}'")))?;
                    if v > 0xff {
                        return Err(ParseError::new(lineno, format!("byte out of range: {v}")));
                    }
                    region.items.push(DataItem::Byte(v as u8));
                }
            }
            ".quad" => {
                let region = self.current_region.as_mut().ok_or_else(|| {
                    ParseError::new(lineno, ".quad outside a named data region")
                })?;
                for item in rest.split(',') {
                    let item = item.trim();
                    match parse_u64(item) {
                        Some(v) => region.items.push(DataItem::Quad(v)),
                        None => region.items.push(DataItem::QuadSym(item.to_string())),
                    }
                }
            }
            _ => {
                self.warnings.push(ParseWarning {
                    line: lineno,
                    message: format!("ignoring unsupported directive '{dir}'"),
                });
            }
        }
        Ok(())
    }

    fn push_instr(&mut self, lineno: usize, instr: Instr) -> Result<(), ParseError> {
        if self.current_func.is_none() {
            return Err(ParseError::new(lineno, "instruction outside a function"));
        }
        if self.current_block.is_none() {
            let label = if self
                .current_func
                .as_ref()
                .is_some_and(|f| f.blocks.is_empty())
            {
                // Instructions directly under the function label form the
                // entry block, named after the function.
                self.current_func.as_ref().unwrap().name.clone()
            } else {
                let l = format!(".Lsynth{}", self.synth_counter);
                self.synth_counter += 1;
                l
            };
            self.current_block = Some(BasicBlock::new(label));
        }
        let ends_block = instr.is_control_transfer();
        self.current_block.as_mut().unwrap().instrs.push(instr);
        if ends_block {
            self.flush_block();
        }
        Ok(())
    }

    fn flush_block(&mut self) {
        if let Some(block) = self.current_block.take() {
            if let Some(func) = self.current_func.as_mut() {
                func.blocks.push(block);
            }
        }
    }

    fn flush_function(&mut self, lineno: usize) -> Result<(), ParseError> {
        self.flush_block();
        if let Some(mut func) = self.current_func.take() {
            if func.blocks.is_empty() {
                return Err(ParseError::new(
                    lineno,
                    format!("function '{}' has no instructions", func.name),
                ));
            }
            func.entry = func.blocks[0].label.clone();
            self.program.functions.push(func);
        }
        Ok(())
    }

    fn flush_region(&mut self) {
        if let Some(region) = self.current_region.take() {
            self.program.data.push(region);
        }
    }

    /// Post-pass: mark exports and check label references.
    fn resolve(&mut self, globals: &[String]) -> Result<(), ParseError> {
        for g in globals {
            if let Some(f) = self.program.function_mut(g) {
                f.exported = true;
            }
        }
        let block_labels: Vec<(String, Vec<String>)> = self
            .program
            .functions
            .iter()
            .map(|f| (f.name.clone(), f.blocks.iter().map(|b| b.label.clone()).collect()))
            .collect();
        let func_names: Vec<String> =
            self.program.functions.iter().map(|f| f.name.clone()).collect();
        let data_names: Vec<String> = self.program.data.iter().map(|d| d.name.clone()).collect();

        for f in &self.program.functions {
            let labels = &block_labels
                .iter()
                .find(|(n, _)| n == &f.name)
                .unwrap()
                .1;
            for b in &f.blocks {
                for i in &b.instrs {
                    match i.mnemonic {
                        Mnemonic::B | Mnemonic::BCond => {
                            let target = i.branch_target().unwrap_or("");
                            if !labels.iter().any(|l| l == target) {
                                return Err(ParseError::new(
                                    0,
                                    format!(
                                        "unresolved local label '{target}' in function '{}'",
                                        f.name
                                    ),
                                ));
                            }
                        }
                        Mnemonic::Bl => {
                            // Cross-function call targets: resolved or external.
                        }
                        _ => {}
                    }
                    for op in &i.operands {
                        if let Operand::SymAddr(s) = op {
                            let known = func_names.iter().any(|n| n == s)
                                || data_names.iter().any(|n| n == s);
                            if !known {
                                return Err(ParseError::new(
                                    0,
                                    format!("unresolved symbol '={s}' in function '{}'", f.name),
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Splits a trailing comment off a line, recognizing `// janus:<M>` as a
/// provenance tag rather than a plain comment.
fn split_comment(line: &str) -> (&str, Option<Mechanism>) {
    let mut meta = None;
    let mut end = line.len();
    for (idx, marker) in [(line.find("//"), "//"), (line.find(';'), ";")] {
        if let Some(pos) = idx {
            if pos < end {
                end = pos;
                let comment = line[pos + marker.len()..].trim();
                meta = comment
                    .strip_prefix("janus:")
                    .and_then(|m| Mechanism::parse(m.trim()));
            }
        }
    }
    (&line[..end], meta)
}

fn parse_u64(s: &str) -> Option<u64> {
    let s = s.trim();
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else {
        s.parse().ok()
    }
}

fn parse_imm(lineno: usize, tok: &str) -> Result<u64, ParseError> {
    let body = tok
        .strip_prefix('#')
        .ok_or_else(|| ParseError::new(lineno, format!("expected immediate, found '{tok}'")))?;
    parse_u64(body).ok_or_else(|| ParseError::new(lineno, format!("malformed immediate '{tok}'")))
}

/// Splits an operand list on commas, keeping `[base, off]` together.
fn split_operands(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '[' => {
                depth += 1;
                cur.push(c);
            }
            ']' => {
                depth = depth.saturating_sub(1);
                cur.push(c);
            }
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_mem(lineno: usize, tok: &str) -> Result<MemAddr, ParseError> {
    let inner = tok
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| ParseError::new(lineno, format!("malformed memory operand '{tok}'")))?;
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    let base = Reg::parse(parts[0])
        .ok_or_else(|| ParseError::new(lineno, format!("bad base register '{}'", parts[0])))?;
    let offset = match parts.len() {
        1 => MemOffset::Imm(0),
        2 => {
            if let Some(imm) = parts[1].strip_prefix('#') {
                let v = parse_u64(imm).ok_or_else(|| {
                    ParseError::new(lineno, format!("bad memory offset '{}'", parts[1]))
                })?;
                if v > 32760 {
                    return Err(ParseError::new(
                        lineno,
                        format!("memory offset out of range: {v}"),
                    ));
                }
                MemOffset::Imm(v as u32)
            } else {
                let r = Reg::parse(parts[1]).ok_or_else(|| {
                    ParseError::new(lineno, format!("bad index register '{}'", parts[1]))
                })?;
                MemOffset::Reg(r)
            }
        }
        _ => {
            return Err(ParseError::new(
                lineno,
                format!("unsupported addressing mode '{tok}'"),
            ))
        }
    };
    Ok(MemAddr { base, offset })
}

fn parse_instr_body(
    lineno: usize,
    body: &str,
    meta: Option<Mechanism>,
) -> Result<Instr, ParseError> {
    let (mn_tok, rest) = match body.split_once(char::is_whitespace) {
        Some((m, r)) => (m, r.trim()),
        None => (body, ""),
    };
    let (mnemonic, cond) = Mnemonic::parse(mn_tok)
        .ok_or_else(|| ParseError::new(lineno, format!("unknown mnemonic '{mn_tok}'")))?;
    let toks = split_operands(rest);

    let reg = |t: &str| {
        Reg::parse(t).ok_or_else(|| ParseError::new(lineno, format!("bad register '{t}'")))
    };
    let need = |n: usize| -> Result<(), ParseError> {
        if toks.len() != n {
            Err(ParseError::new(
                lineno,
                format!("'{mn_tok}' expects {n} operand(s), found {}", toks.len()),
            ))
        } else {
            Ok(())
        }
    };

    let mut operands = Vec::new();
    match mnemonic {
        Mnemonic::Mov => {
            need(2)?;
            operands.push(Operand::Reg(reg(&toks[0])?));
            if let Some(sym) = toks[1].strip_prefix('=') {
                operands.push(Operand::SymAddr(sym.to_string()));
            } else if toks[1].starts_with('#') {
                let v = parse_imm(lineno, &toks[1])?;
                if v > 0xffff {
                    return Err(ParseError::new(
                        lineno,
                        format!("mov immediate out of range (16-bit): {v:#x}"),
                    ));
                }
                operands.push(Operand::Imm(v));
            } else {
                operands.push(Operand::Reg(reg(&toks[1])?));
            }
        }
        Mnemonic::Movk => {
            if toks.len() != 2 && toks.len() != 3 {
                return Err(ParseError::new(lineno, "movk expects 2 or 3 operands"));
            }
            operands.push(Operand::Reg(reg(&toks[0])?));
            let v = parse_imm(lineno, &toks[1])?;
            if v > 0xffff {
                return Err(ParseError::new(
                    lineno,
                    format!("movk immediate out of range (16-bit): {v:#x}"),
                ));
            }
            operands.push(Operand::Imm(v));
            if toks.len() == 3 {
                let shift = toks[2]
                    .strip_prefix("lsl")
                    .map(str::trim)
                    .and_then(|t| t.strip_prefix('#'))
                    .and_then(|t| t.parse::<u8>().ok())
                    .filter(|s| matches!(s, 0 | 16 | 32 | 48))
                    .ok_or_else(|| {
                        ParseError::new(lineno, format!("bad movk shift '{}'", toks[2]))
                    })?;
                operands.push(Operand::Shift(shift));
            }
        }
        Mnemonic::Add | Mnemonic::Sub | Mnemonic::And | Mnemonic::Orr | Mnemonic::Eor => {
            need(3)?;
            operands.push(Operand::Reg(reg(&toks[0])?));
            operands.push(Operand::Reg(reg(&toks[1])?));
            if toks[2].starts_with('#') {
                let v = parse_imm(lineno, &toks[2])?;
                let limit = match mnemonic {
                    Mnemonic::Add | Mnemonic::Sub => 0xfff,
                    _ => 0xffff,
                };
                if v > limit {
                    return Err(ParseError::new(
                        lineno,
                        format!("'{mn_tok}' immediate out of range: {v:#x}"),
                    ));
                }
                operands.push(Operand::Imm(v));
            } else {
                operands.push(Operand::Reg(reg(&toks[2])?));
            }
        }
        Mnemonic::Lsl | Mnemonic::Lsr => {
            need(3)?;
            operands.push(Operand::Reg(reg(&toks[0])?));
            operands.push(Operand::Reg(reg(&toks[1])?));
            if toks[2].starts_with('#') {
                let v = parse_imm(lineno, &toks[2])?;
                if v > 63 {
                    return Err(ParseError::new(lineno, format!("shift out of range: {v}")));
                }
                operands.push(Operand::Imm(v));
            } else {
                operands.push(Operand::Reg(reg(&toks[2])?));
            }
        }
        Mnemonic::Cmp => {
            need(2)?;
            operands.push(Operand::Reg(reg(&toks[0])?));
            if toks[1].starts_with('#') {
                let v = parse_imm(lineno, &toks[1])?;
                if v > 0xffff {
                    return Err(ParseError::new(
                        lineno,
                        format!("cmp immediate out of range: {v:#x}"),
                    ));
                }
                operands.push(Operand::Imm(v));
            } else {
                operands.push(Operand::Reg(reg(&toks[1])?));
            }
        }
        Mnemonic::Csel => {
            need(4)?;
            operands.push(Operand::Reg(reg(&toks[0])?));
            operands.push(Operand::Reg(reg(&toks[1])?));
            operands.push(Operand::Reg(reg(&toks[2])?));
            let c = Cond::parse(&toks[3]).ok_or_else(|| {
                ParseError::new(lineno, format!("bad condition code '{}'", toks[3]))
            })?;
            operands.push(Operand::Cond(c));
        }
        Mnemonic::Ldr | Mnemonic::Ldrb | Mnemonic::Str | Mnemonic::Strb => {
            need(2)?;
            operands.push(Operand::Reg(reg(&toks[0])?));
            operands.push(Operand::Mem(parse_mem(lineno, &toks[1])?));
        }
        Mnemonic::B | Mnemonic::Bl => {
            need(1)?;
            operands.push(Operand::Label(toks[0].clone()));
        }
        Mnemonic::BCond => {
            need(1)?;
            operands.push(Operand::Cond(cond.expect("b.cond carries its condition")));
            operands.push(Operand::Label(toks[0].clone()));
        }
        Mnemonic::Br | Mnemonic::Blr => {
            need(1)?;
            operands.push(Operand::Reg(reg(&toks[0])?));
        }
        Mnemonic::Ret | Mnemonic::Paciasp | Mnemonic::Autiasp | Mnemonic::Nop => {
            need(0)?;
        }
        Mnemonic::Bti => {
            need(1)?;
            let mode = BtiMode::parse(&toks[0])
                .ok_or_else(|| ParseError::new(lineno, format!("bad bti mode '{}'", toks[0])))?;
            operands.push(Operand::Bti(mode));
        }
        Mnemonic::Pacia | Mnemonic::Pacda | Mnemonic::Autia | Mnemonic::Autda => {
            need(2)?;
            operands.push(Operand::Reg(reg(&toks[0])?));
            if toks[1].starts_with('#') {
                return Err(ParseError::new(
                    lineno,
                    format!("'{mn_tok}' modifier must be a register"),
                ));
            }
            operands.push(Operand::Reg(reg(&toks[1])?));
        }
    }
    Ok(Instr {
        mnemonic,
        operands,
        meta,
    })
}
