//! Per-function control-flow graph construction.
//!
//! Edges are derived purely from block terminators. Indirect branches
//! (`br`, `blr`) contribute unresolved edges; `blr` also yields a
//! return-continuation edge to the lexically next block.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::inst::Mnemonic;
use super::program::AsmFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    /// Unconditional `b`.
    Jump,
    /// Taken side of a `b.<cond>`.
    CondTaken,
    /// Fallthrough: untaken side of a conditional, or no terminator.
    Fallthrough,
    /// Continuation after a `bl`/`blr` call.
    CallContinuation,
    /// Indirect target of `br`/`blr`; target unknown.
    Indirect,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    /// `None` marks an unresolved (indirect) edge.
    pub target: Option<String>,
    pub kind: EdgeKind,
}

impl Edge {
    fn to(label: &str, kind: EdgeKind) -> Edge {
        Edge {
            target: Some(label.to_string()),
            kind,
        }
    }

    const UNRESOLVED: Edge = Edge {
        target: None,
        kind: EdgeKind::Indirect,
    };
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cfg {
    pub succs: BTreeMap<String, Vec<Edge>>,
    pub preds: BTreeMap<String, Vec<String>>,
}

impl Cfg {
    pub fn successors(&self, label: &str) -> &[Edge] {
        self.succs.get(label).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn predecessors(&self, label: &str) -> &[String] {
        self.preds.get(label).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Resolved successor labels only.
    pub fn resolved_successors(&self, label: &str) -> Vec<&str> {
        self.successors(label)
            .iter()
            .filter_map(|e| e.target.as_deref())
            .collect()
    }

    pub fn has_unresolved(&self, label: &str) -> bool {
        self.successors(label).iter().any(|e| e.target.is_none())
    }
}

pub fn build_cfg(f: &AsmFunction) -> Cfg {
    let mut cfg = Cfg::default();
    for b in &f.blocks {
        cfg.succs.entry(b.label.clone()).or_default();
        cfg.preds.entry(b.label.clone()).or_default();
    }
    for (i, b) in f.blocks.iter().enumerate() {
        let next = f.blocks.get(i + 1).map(|nb| nb.label.as_str());
        let mut edges = Vec::new();
        match b.terminator() {
            None => {
                if let Some(n) = next {
                    edges.push(Edge::to(n, EdgeKind::Fallthrough));
                }
            }
            Some(t) => match t.mnemonic {
                Mnemonic::B => {
                    if let Some(target) = t.branch_target() {
                        edges.push(Edge::to(target, EdgeKind::CondTaken));
                        edges.last_mut().unwrap().kind = EdgeKind::Jump;
                    }
                }
                Mnemonic::BCond => {
                    if let Some(target) = t.branch_target() {
                        edges.push(Edge::to(target, EdgeKind::CondTaken));
                    }
                    if let Some(n) = next {
                        edges.push(Edge::to(n, EdgeKind::Fallthrough));
                    }
                }
                Mnemonic::Br => {
                    edges.push(Edge::UNRESOLVED);
                }
                Mnemonic::Blr => {
                    edges.push(Edge::UNRESOLVED);
                    if let Some(n) = next {
                        edges.push(Edge::to(n, EdgeKind::CallContinuation));
                    }
                }
                Mnemonic::Bl => {
                    // The call target is cross-function; within this CFG the
                    // only edge is the continuation.
                    if let Some(n) = next {
                        edges.push(Edge::to(n, EdgeKind::CallContinuation));
                    }
                }
                Mnemonic::Ret => {}
                _ => unreachable!("non-terminator mnemonic as terminator"),
            },
        }
        for e in &edges {
            if let Some(t) = &e.target {
                cfg.preds.entry(t.clone()).or_default().push(b.label.clone());
            }
        }
        cfg.succs.insert(b.label.clone(), edges);
    }
    cfg
}
