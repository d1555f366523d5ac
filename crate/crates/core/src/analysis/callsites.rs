//! Indirect call sites, function signatures, and type-based equivalence
//! classes.
//!
//! Signatures come from a sidecar file (assembly carries no types):
//!
//! ```text
//! sig <function> <arity> <ret:0|1>
//! sitesig <func:block:idx> <arity> <ret:0|1>   # optional per-site type
//! input <region-name>
//! ```
//!
//! A site without a `sitesig` line falls back to pointer provenance: the
//! abstract value of the pointer register must resolve to a function or a
//! function-pointer table.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asm::{AsmProgram, Loc, Mnemonic, Operand, Reg};
use crate::policy::ModifierTag;

use super::absint::{abstract_values, AbsVal};
use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Signature {
    pub arity: u8,
    pub ret: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Sidecar {
    pub sigs: BTreeMap<String, Signature>,
    pub site_sigs: BTreeMap<Loc, Signature>,
    pub input_regions: Vec<String>,
}

pub fn parse_sidecar(text: &str) -> Result<Sidecar, AnalysisError> {
    let mut out = Sidecar::default();
    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let err = |reason: String| AnalysisError::SidecarParse {
            line: lineno,
            reason,
        };
        match toks[0] {
            "sig" | "sitesig" => {
                if toks.len() != 4 {
                    return Err(err(format!("{} expects 3 arguments", toks[0])));
                }
                let arity: u8 = toks[2]
                    .parse()
                    .map_err(|_| err(format!("bad arity '{}'", toks[2])))?;
                let ret = match toks[3] {
                    "0" => false,
                    "1" => true,
                    other => return Err(err(format!("bad ret flag '{other}'"))),
                };
                let sig = Signature { arity, ret };
                if toks[0] == "sig" {
                    out.sigs.insert(toks[1].to_string(), sig);
                } else {
                    let loc =
                        Loc::from_str(toks[1]).map_err(|e| err(e.reason))?;
                    out.site_sigs.insert(loc, sig);
                }
            }
            "input" => {
                if toks.len() != 2 {
                    return Err(err("input expects a region name".to_string()));
                }
                out.input_regions.push(toks[1].to_string());
            }
            other => return Err(err(format!("unknown sidecar directive '{other}'"))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSiteInfo {
    /// Location of the `blr`.
    pub site: Loc,
    pub pointer_register: Reg,
    /// Index into the class list, assigned by `compute_equivalence_classes`.
    pub target_class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivClass {
    pub id: usize,
    pub members: Vec<String>,
    pub signature: Signature,
    /// Assigned by `assign_modifiers`; zero until then.
    pub tag: ModifierTag,
}

/// Every `blr` site, annotated with its pointer register.
pub fn find_indirect_branches(p: &AsmProgram) -> Vec<CallSiteInfo> {
    let mut out = Vec::new();
    for (loc, i) in p.locs() {
        if i.mnemonic == Mnemonic::Blr {
            let reg = match i.operands.first() {
                Some(Operand::Reg(r)) => *r,
                _ => continue,
            };
            out.push(CallSiteInfo {
                site: loc,
                pointer_register: reg,
                target_class: None,
            });
        }
    }
    out
}

/// Partition address-taken functions by signature, then resolve each call
/// site's target class via `sitesig` or pointer provenance.
pub fn compute_equivalence_classes(
    p: &AsmProgram,
    sites: &mut [CallSiteInfo],
    sidecar: &Sidecar,
) -> Result<Vec<EquivClass>, AnalysisError> {
    let address_taken = p.address_taken_functions();
    let mut classes: Vec<EquivClass> = Vec::new();
    for func in &address_taken {
        let sig = sidecar
            .sigs
            .get(func)
            .copied()
            .ok_or_else(|| AnalysisError::MissingSignature(func.clone()))?;
        match classes.iter_mut().find(|c| c.signature == sig) {
            Some(c) => c.members.push(func.clone()),
            None => classes.push(EquivClass {
                id: classes.len(),
                members: vec![func.clone()],
                signature: sig,
                tag: ModifierTag(0),
            }),
        }
    }
    for c in &mut classes {
        c.members.sort();
    }

    // Cache abstract values per function touched by a site.
    let mut abs_cache: BTreeMap<String, BTreeMap<Loc, BTreeMap<Reg, AbsVal>>> = BTreeMap::new();
    for site in sites.iter_mut() {
        if let Some(sig) = sidecar.site_sigs.get(&site.site) {
            let class = classes
                .iter()
                .find(|c| c.signature == *sig)
                .ok_or_else(|| AnalysisError::UnresolvedSiteClass(site.site.clone()))?;
            site.target_class = Some(class.id);
            continue;
        }
        let f = p
            .function(&site.site.func)
            .ok_or_else(|| AnalysisError::UnresolvedSiteClass(site.site.clone()))?;
        let abs = abs_cache
            .entry(f.name.clone())
            .or_insert_with(|| abstract_values(p, f));
        let vals = abs.get(&site.site);
        let target_funcs: Vec<String> = match vals.and_then(|v| v.get(&site.pointer_register)) {
            Some(AbsVal::Code(name)) => vec![name.clone()],
            Some(AbsVal::Region(table, _)) => table_members(p, table),
            _ => Vec::new(),
        };
        if target_funcs.is_empty() {
            return Err(AnalysisError::UnresolvedSiteClass(site.site.clone()));
        }
        let mut ids: Vec<usize> = target_funcs
            .iter()
            .filter_map(|t| {
                classes
                    .iter()
                    .find(|c| c.members.iter().any(|m| m == t))
                    .map(|c| c.id)
            })
            .collect();
        ids.sort();
        ids.dedup();
        match ids.as_slice() {
            [one] => site.target_class = Some(*one),
            [] => return Err(AnalysisError::UnresolvedSiteClass(site.site.clone())),
            _ => return Err(AnalysisError::AmbiguousSiteClass(site.site.clone())),
        }
    }
    Ok(classes)
}

/// Functions referenced by `.quad` entries of a table region.
fn table_members(p: &AsmProgram, table: &str) -> Vec<String> {
    match p.region(table) {
        Some(region) => region
            .items
            .iter()
            .filter_map(|item| match item {
                crate::asm::DataItem::QuadSym(s) if p.function(s).is_some() => Some(s.clone()),
                _ => None,
            })
            .collect(),
        None => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_program;

    #[test]
    fn finds_blr_sites_with_registers() {
        let text = "\
f:
.bb6:
\tmov x24, =handlers
\tldr x8, [x24]
\tblr x8
\tret
.data
handlers:
\t.quad f
";
        let p = parse_program(text).unwrap().program;
        let sites = find_indirect_branches(&p);
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].site, Loc::new("f", ".bb6", 2));
        assert_eq!(sites[0].pointer_register, Reg::X(8));
    }

    #[test]
    fn direct_calls_only_gives_empty_list() {
        let p = parse_program("f:\n bl g\n ret\ng:\n ret\n").unwrap().program;
        assert!(find_indirect_branches(&p).is_empty());
    }

    #[test]
    fn counts_sites_across_functions() {
        let text = "\
f:
\tblr x8
\tblr x9
\tret
g:
\tblr x10
\tret
";
        let p = parse_program(text).unwrap().program;
        // Independent oracle: count blr mnemonics in the source text.
        let expected = text.matches("blr").count();
        assert_eq!(find_indirect_branches(&p).len(), expected);
        assert_eq!(expected, 3);
    }

    #[test]
    fn identical_signatures_share_a_class() {
        let text = "\
main:
\tmov x8, =f
\tblr x8
\tret
f:
\tret
g:
\tret
.data
table:
\t.quad f, g
";
        let p = parse_program(text).unwrap().program;
        let sidecar = parse_sidecar("sig f 1 0\nsig g 1 0\n").unwrap();
        let mut sites = find_indirect_branches(&p);
        let classes = compute_equivalence_classes(&p, &mut sites, &sidecar).unwrap();
        assert_eq!(classes.len(), 1);
        assert_eq!(classes[0].members, vec!["f".to_string(), "g".to_string()]);
        assert_eq!(sites[0].target_class, Some(0));
    }

    #[test]
    fn different_arity_splits_classes() {
        let text = "\
main:
\tmov x8, =f
\tblr x8
\tmov x8, =g
\tblr x8
\tret
f:
\tret
g:
\tret
";
        let p = parse_program(text).unwrap().program;
        let sidecar = parse_sidecar("sig f 1 0\nsig g 2 0\n").unwrap();
        let mut sites = find_indirect_branches(&p);
        let classes = compute_equivalence_classes(&p, &mut sites, &sidecar).unwrap();
        assert_eq!(classes.len(), 2);
    }

    #[test]
    fn five_functions_three_signatures_partition() {
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
e:
\tret
.data
t1:
\t.quad a, b
t2:
\t.quad c, d
t3:
\t.quad e
";
        let p = parse_program(text).unwrap().program;
        let sidecar_text = "\
sig a 1 0
sig b 1 0
sig c 2 0
sig d 2 0
sig e 0 1
";
        let sidecar = parse_sidecar(sidecar_text).unwrap();
        let mut sites = find_indirect_branches(&p);
        let classes = compute_equivalence_classes(&p, &mut sites, &sidecar).unwrap();

        // Brute-force oracle: partition by signature-string equality.
        let mut by_sig: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        for line in sidecar_text.lines() {
            let t: Vec<&str> = line.split_whitespace().collect();
            by_sig
                .entry(format!("{} {}", t[2], t[3]))
                .or_default()
                .push(t[1]);
        }
        assert_eq!(classes.len(), by_sig.len());
        let total: usize = classes.iter().map(|c| c.members.len()).sum();
        assert_eq!(total, 5);
        // Pairwise disjoint.
        for (i, c1) in classes.iter().enumerate() {
            for c2 in classes.iter().skip(i + 1) {
                assert!(c1.members.iter().all(|m| !c2.members.contains(m)));
            }
        }
    }

    #[test]
    fn missing_signature_is_an_error() {
        let text = "\
main:
\tmov x8, =f
\tblr x8
\tret
f:
\tret
";
        let p = parse_program(text).unwrap().program;
        let sidecar = parse_sidecar("").unwrap();
        let mut sites = find_indirect_branches(&p);
        let err = compute_equivalence_classes(&p, &mut sites, &sidecar).unwrap_err();
        assert_eq!(err, AnalysisError::MissingSignature("f".to_string()));
    }
}
