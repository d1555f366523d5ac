//! Observable cache trace: the ordered footprint of memory touches plus
//! squash events. Leakage is defined as trace membership; there is no
//! eviction or timing model.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::asm::Loc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Architectural,
    /// Committed to the cache by a transient (mis-speculated) access.
    Transient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SquashCause {
    PacMismatch,
    BtiMismatch,
    Budget,
    Resolve,
}

impl fmt::Display for SquashCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SquashCause::PacMismatch => "PAC-mismatch",
            SquashCause::BtiMismatch => "BTI-mismatch",
            SquashCause::Budget => "budget",
            SquashCause::Resolve => "resolve",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    Access {
        /// Cache-line address: byte address / 64.
        line: u64,
        phase: Phase,
    },
    Squash {
        loc: Loc,
        cause: SquashCause,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheTrace {
    pub events: Vec<TraceEvent>,
}

impl CacheTrace {
    pub fn push_access(&mut self, addr: u64, phase: Phase) {
        self.events.push(TraceEvent::Access {
            line: addr / super::machine::CACHE_LINE,
            phase,
        });
    }

    pub fn push_squash(&mut self, loc: Loc, cause: SquashCause) {
        self.events.push(TraceEvent::Squash { loc, cause });
    }

    pub fn transient_lines(&self) -> Vec<u64> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Access {
                    line,
                    phase: Phase::Transient,
                } => Some(*line),
                _ => None,
            })
            .collect()
    }

    pub fn architectural_lines(&self) -> Vec<u64> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Access {
                    line,
                    phase: Phase::Architectural,
                } => Some(*line),
                _ => None,
            })
            .collect()
    }

    pub fn squashes(&self) -> Vec<(&Loc, SquashCause)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Squash { loc, cause } => Some((loc, *cause)),
                _ => None,
            })
            .collect()
    }

    /// Only the transient-phase events (accesses and squashes), for
    /// secret-independence comparisons.
    pub fn transient_events(&self) -> Vec<&TraceEvent> {
        self.events
            .iter()
            .filter(|e| {
                !matches!(
                    e,
                    TraceEvent::Access {
                        phase: Phase::Architectural,
                        ..
                    }
                )
            })
            .collect()
    }

    /// Stable one-line-per-event dump.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            match e {
                TraceEvent::Access { line, phase } => {
                    let p = match phase {
                        Phase::Architectural => "arch",
                        Phase::Transient => "transient",
                    };
                    out.push_str(&format!("access {p} line {line:#x}\n"));
                }
                TraceEvent::Squash { loc, cause } => {
                    out.push_str(&format!("squash {cause} at {loc}\n"));
                }
            }
        }
        out
    }
}
