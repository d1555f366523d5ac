//! Policy file grammar.
//!
//! ```text
//! # comment
//! cfi <func:block:idx> <tag-hex>
//! cfitarget <func> <tag-hex>
//! dfi <reg>@<func:block:idx> <func:block:idx> <src|sink> <tag-hex>
//! dfi <reg>@<func:block:idx> <src|sink> <tag-hex>     # loc defaults to the variable's loc
//! spectre <func:block:idx> <tag-hex>
//! ```
//!
//! The `spectre` line names the conditional-branch site; the protected
//! variable is derived from DOP analysis when policies are resolved
//! against a program.

use std::fmt::Write;
use std::str::FromStr;

use crate::asm::{Loc, Reg};

use super::set::{CfiSitePolicy, ModifierTag, PolicySet, PolicyTuple, TupleKind, VarId};
use super::PolicyError;

fn perr(line: usize, reason: impl Into<String>) -> PolicyError {
    PolicyError::Parse {
        line,
        reason: reason.into(),
    }
}

fn parse_tag(line: usize, tok: &str) -> Result<ModifierTag, PolicyError> {
    let v = if let Some(hex) = tok.strip_prefix("0x") {
        u16::from_str_radix(hex, 16).ok()
    } else {
        tok.parse().ok()
    }
    .ok_or_else(|| perr(line, format!("malformed tag '{tok}'")))?;
    if v == 0 {
        return Err(PolicyError::ZeroTag(line));
    }
    Ok(ModifierTag(v))
}

fn parse_loc(line: usize, tok: &str) -> Result<Loc, PolicyError> {
    Loc::from_str(tok).map_err(|e| perr(line, e.reason))
}

fn parse_var(line: usize, tok: &str) -> Result<VarId, PolicyError> {
    let (reg, loc) = tok
        .split_once('@')
        .ok_or_else(|| perr(line, format!("variable '{tok}' must be <reg>@<loc>")))?;
    let reg = Reg::parse(reg).ok_or_else(|| perr(line, format!("bad register '{reg}'")))?;
    Ok(VarId::new(reg, parse_loc(line, loc)?))
}

pub fn load_external_policy(text: &str) -> Result<PolicySet, PolicyError> {
    let mut set = PolicySet::default();
    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "cfi" => {
                if toks.len() != 3 {
                    return Err(perr(lineno, "cfi expects: cfi <loc> <tag>"));
                }
                set.cfi_sites.push(CfiSitePolicy {
                    site: parse_loc(lineno, toks[1])?,
                    tag: parse_tag(lineno, toks[2])?,
                });
            }
            "cfitarget" => {
                if toks.len() != 3 {
                    return Err(perr(lineno, "cfitarget expects: cfitarget <func> <tag>"));
                }
                set.target_tags
                    .insert(toks[1].to_string(), parse_tag(lineno, toks[2])?);
            }
            "dfi" => {
                let (var, loc, kind_tok, tag_tok) = match toks.len() {
                    5 => (
                        parse_var(lineno, toks[1])?,
                        parse_loc(lineno, toks[2])?,
                        toks[3],
                        toks[4],
                    ),
                    4 => {
                        let var = parse_var(lineno, toks[1])?;
                        let loc = var.def_loc.clone();
                        (var, loc, toks[2], toks[3])
                    }
                    _ => {
                        return Err(perr(
                            lineno,
                            "dfi expects: dfi <var> [<loc>] <src|sink> <tag>",
                        ))
                    }
                };
                let kind = match kind_tok {
                    "src" => TupleKind::DfiSource,
                    "sink" => TupleKind::DfiSink,
                    other => return Err(perr(lineno, format!("unknown dfi kind '{other}'"))),
                };
                set.dfi.push(PolicyTuple {
                    var,
                    loc,
                    tag: parse_tag(lineno, tag_tok)?,
                    kind,
                });
            }
            "spectre" => {
                if toks.len() != 3 {
                    return Err(perr(lineno, "spectre expects: spectre <loc> <tag>"));
                }
                set.pending_spectre_sites
                    .push((parse_loc(lineno, toks[1])?, parse_tag(lineno, toks[2])?));
            }
            other => return Err(perr(lineno, format!("unknown policy kind '{other}'"))),
        }
    }
    set.sort();
    Ok(set)
}

pub fn emit_policy(set: &PolicySet) -> String {
    let mut sorted = set.clone();
    sorted.sort();
    let mut out = String::new();
    for c in &sorted.cfi_sites {
        let _ = writeln!(out, "cfi {} {}", c.site, c.tag);
    }
    for (func, tag) in &sorted.target_tags {
        let _ = writeln!(out, "cfitarget {func} {tag}");
    }
    for t in &sorted.dfi {
        let kind = match t.kind {
            TupleKind::DfiSource => "src",
            TupleKind::DfiSink => "sink",
            TupleKind::Spectre => continue,
        };
        let _ = writeln!(out, "dfi {} {} {kind} {}", t.var, t.loc, t.tag);
    }
    for t in &sorted.spectre {
        // Emitted against the variable's branch site when pending, else the
        // resolved form keyed by the variable's defining location.
        let _ = writeln!(out, "spectre {} {}", t.loc, t.tag);
    }
    for (loc, tag) in &sorted.pending_spectre_sites {
        let _ = writeln!(out, "spectre {loc} {tag}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_dfi_line_parses() {
        let set = load_external_policy("dfi x0@f:.bb2:3 src 0x135\n").unwrap();
        assert_eq!(set.dfi.len(), 1);
        let t = &set.dfi[0];
        assert_eq!(t.kind, TupleKind::DfiSource);
        assert_eq!(t.tag, ModifierTag(0x135));
        assert_eq!(t.var.reg, Reg::X(0));
        assert_eq!(t.loc, Loc::new("f", ".bb2", 3));
    }

    #[test]
    fn empty_file_gives_empty_set() {
        let set = load_external_policy("# nothing here\n\n").unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn worked_example_policy_counts() {
        let text = "\
# bounds-check scenario: one DFI pair, one Spectre branch, one CFI site
dfi x9@victim:.bb2:0 src 0x135
dfi x9@victim:.bb2:0 victim:.bb3:1 sink 0x135
spectre victim:.bb3:2 0x2c7
cfi victim:.bb6:2 0x9c2
cfitarget handler_a 0x9c2
";
        let set = load_external_policy(text).unwrap();
        assert_eq!(set.dfi.len(), 2);
        assert_eq!(set.pending_spectre_sites.len(), 1);
        assert_eq!(set.cfi_sites.len(), 1);
        assert_eq!(set.cfi_sites[0].tag, ModifierTag(0x9c2));
    }

    #[test]
    fn unknown_kind_rejected() {
        let err = load_external_policy("blorp f:.bb1:0 0x1\n").unwrap_err();
        assert!(matches!(err, PolicyError::Parse { line: 1, .. }));
    }

    #[test]
    fn zero_tag_rejected() {
        let err = load_external_policy("cfi f:.bb1:0 0x0\n").unwrap_err();
        assert_eq!(err, PolicyError::ZeroTag(1));
    }

    #[test]
    fn emit_round_trips() {
        let text = "\
cfi victim:.bb6:2 0x9c2
cfitarget handler_a 0x9c2
dfi x9@victim:.bb2:0 victim:.bb2:0 src 0x135
spectre victim:.bb3:2 0x2c7
";
        let set = load_external_policy(text).unwrap();
        let emitted = emit_policy(&set);
        let reparsed = load_external_policy(&emitted).unwrap();
        assert_eq!(set, reparsed);
    }
}
