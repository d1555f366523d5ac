//! Attack-scenario descriptions and their file format.
//!
//! A scenario names the victim program, the attack variant, the
//! misprediction directive, the secret and probe regions, and any
//! attacker writes applied before the run. One directive per line:
//!
//! ```text
//! variant v1
//! program victim.s
//! hardened victim.hardened.s
//! entry main
//! init x0 0x2
//! window 32
//! mistrain branch victim:.bb3:2 taken
//! mistrain indirect victim:.bb6:2 evil
//! mistrain return helper:.bb1:0 victim:.bb7
//! secret secret
//! probe probe
//! write slot+3 0x41
//! write_quad table+0 evil
//! pacman slot 0x1234 0x777
//! # comment
//! ```

use std::str::FromStr;

use thiserror::Error;

use crate::asm::{Loc, Reg};

use super::exec::Mistrain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    V1,
    V2,
    V5,
    Pacman,
    Dop,
    CfiHijack,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V5 => "v5",
            Variant::Pacman => "pacman",
            Variant::Dop => "dop",
            Variant::CfiHijack => "cfi-hijack",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Some(match s.to_ascii_lowercase().as_str() {
            "v1" => Variant::V1,
            "v2" => Variant::V2,
            "v5" => Variant::V5,
            "pacman" => Variant::Pacman,
            "dop" => Variant::Dop,
            "cfi-hijack" | "cfihijack" => Variant::CfiHijack,
            _ => return None,
        })
    }
}

/// An attacker write applied to data memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriteDirective {
    /// `write <region[+off]|0xaddr> <byte>` — applied before the run.
    Byte(String, u8),
    /// `write_quad <region[+off]|0xaddr> <symbol|0xvalue>` — before the run.
    Quad(String, QuadSource),
    /// `write_at <loc> <region[+off]|0xaddr> <byte>` — fires when execution
    /// first reaches the location, modeling a concurrent attacker.
    ByteAt(Loc, String, u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuadSource {
    Symbol(String),
    Value(u64),
}

/// PAC-guess oracle parameters: the forged slot, the raw payload, and the
/// modifier the victim authenticates with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacmanParams {
    pub slot: String,
    pub raw: u64,
    pub modifier: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackScenario {
    pub variant: Variant,
    pub program_path: Option<String>,
    pub hardened_path: Option<String>,
    pub entry: String,
    pub inits: Vec<(Reg, u64)>,
    pub window: Option<u32>,
    pub mistrain: Option<Mistrain>,
    pub secret: Option<String>,
    pub probe: Option<String>,
    pub writes: Vec<WriteDirective>,
    pub pacman: Option<PacmanParams>,
}

impl AttackScenario {
    pub fn new(variant: Variant) -> AttackScenario {
        AttackScenario {
            variant,
            program_path: None,
            hardened_path: None,
            entry: "main".to_string(),
            inits: Vec::new(),
            window: None,
            mistrain: None,
            secret: None,
            probe: None,
            writes: Vec::new(),
            pacman: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("scenario is missing the '{0}' directive")]
    Missing(&'static str),
    #[error("probe region must differ from the secret region")]
    ProbeOverlapsSecret,
}

fn err(line: usize, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Malformed {
        line,
        reason: reason.into(),
    }
}

fn parse_u64_tok(line: usize, tok: &str) -> Result<u64, ScenarioError> {
    let v = if let Some(hex) = tok.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).ok()
    } else {
        tok.parse().ok()
    };
    v.ok_or_else(|| err(line, format!("malformed number '{tok}'")))
}

pub fn parse_scenario(text: &str) -> Result<AttackScenario, ScenarioError> {
    let mut variant = None;
    let mut sc = AttackScenario::new(Variant::V1);
    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "variant" => {
                let v = toks
                    .get(1)
                    .and_then(|t| Variant::parse(t))
                    .ok_or_else(|| err(lineno, "unknown variant"))?;
                variant = Some(v);
            }
            "program" => sc.program_path = toks.get(1).map(|s| s.to_string()),
            "hardened" => sc.hardened_path = toks.get(1).map(|s| s.to_string()),
            "entry" => sc.entry = toks.get(1).unwrap_or(&"main").to_string(),
            "init" => {
                if toks.len() != 3 {
                    return Err(err(lineno, "init expects: init <reg> <value>"));
                }
                let r = Reg::parse(toks[1]).ok_or_else(|| err(lineno, "bad register"))?;
                sc.inits.push((r, parse_u64_tok(lineno, toks[2])?));
            }
            "window" => {
                sc.window = Some(parse_u64_tok(lineno, toks.get(1).unwrap_or(&""))? as u32)
            }
            "mistrain" => {
                if toks.len() < 4 {
                    return Err(err(lineno, "mistrain expects a kind, a loc, and an argument"));
                }
                let loc = Loc::from_str(toks[2]).map_err(|e| err(lineno, e.reason))?;
                let m = match toks[1] {
                    "branch" => match toks[3] {
                        "taken" => Mistrain::Branch { loc, taken: true },
                        "nottaken" => Mistrain::Branch { loc, taken: false },
                        other => return Err(err(lineno, format!("bad direction '{other}'"))),
                    },
                    "indirect" => Mistrain::Indirect {
                        loc,
                        target: toks[3].to_string(),
                    },
                    "return" => Mistrain::Return {
                        loc,
                        target: toks[3].to_string(),
                    },
                    other => return Err(err(lineno, format!("bad mistrain kind '{other}'"))),
                };
                sc.mistrain = Some(m);
            }
            "secret" => sc.secret = toks.get(1).map(|s| s.to_string()),
            "probe" => sc.probe = toks.get(1).map(|s| s.to_string()),
            "write" => {
                if toks.len() != 3 {
                    return Err(err(lineno, "write expects: write <addr> <byte>"));
                }
                let v = parse_u64_tok(lineno, toks[2])?;
                if v > 0xff {
                    return Err(err(lineno, "write value out of byte range"));
                }
                sc.writes
                    .push(WriteDirective::Byte(toks[1].to_string(), v as u8));
            }
            "write_at" => {
                if toks.len() != 4 {
                    return Err(err(lineno, "write_at expects: write_at <loc> <addr> <byte>"));
                }
                let loc = Loc::from_str(toks[1]).map_err(|e| err(lineno, e.reason))?;
                let v = parse_u64_tok(lineno, toks[3])?;
                if v > 0xff {
                    return Err(err(lineno, "write value out of byte range"));
                }
                sc.writes
                    .push(WriteDirective::ByteAt(loc, toks[2].to_string(), v as u8));
            }
            "write_quad" => {
                if toks.len() != 3 {
                    return Err(err(lineno, "write_quad expects: write_quad <addr> <value>"));
                }
                let src = if toks[2].starts_with("0x") || toks[2].chars().all(|c| c.is_ascii_digit())
                {
                    QuadSource::Value(parse_u64_tok(lineno, toks[2])?)
                } else {
                    QuadSource::Symbol(toks[2].to_string())
                };
                sc.writes
                    .push(WriteDirective::Quad(toks[1].to_string(), src));
            }
            "pacman" => {
                if toks.len() != 4 {
                    return Err(err(lineno, "pacman expects: pacman <slot> <raw> <mod>"));
                }
                sc.pacman = Some(PacmanParams {
                    slot: toks[1].to_string(),
                    raw: parse_u64_tok(lineno, toks[2])?,
                    modifier: parse_u64_tok(lineno, toks[3])?,
                });
            }
            other => return Err(err(lineno, format!("unknown directive '{other}'"))),
        }
    }
    sc.variant = variant.ok_or(ScenarioError::Missing("variant"))?;
    if let (Some(s), Some(p)) = (&sc.secret, &sc.probe) {
        if s == p {
            return Err(ScenarioError::ProbeOverlapsSecret);
        }
    }
    Ok(sc)
}
