//! Attack runners, one per variant, behind a common trait and selected by
//! name at runtime.
//!
//! V1/V2/V5 share the speculative-leak machinery and differ in which
//! misprediction directive they accept. PACMAN sweeps a PAC-guess oracle.
//! DOP and CFI-hijack are architectural attacks.

mod arch;
pub mod pacman;
mod speculative;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::asm::AsmProgram;

use super::exec::{Fault, SimError};
use super::machine::{Image, MachineState, SimConfig};
use super::scenario::{AttackScenario, QuadSource, Variant, WriteDirective};
use super::trace::{CacheTrace, SquashCause};

pub use arch::{CfiHijackRunner, DopRunner};
pub use pacman::{PacmanRunner, SAMPLED_GUESSES};
pub use speculative::{V1Runner, V2Runner, V5Runner};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("scenario invalid: {0}")]
    Scenario(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("no runner registered for variant '{0}'")]
    UnknownVariant(String),
}

/// The attack verdict: whether secret data leaked, what was recovered,
/// and the observable trace behind the call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakVerdict {
    pub leaked: bool,
    pub recovered_bytes: Vec<u8>,
    pub trace: CacheTrace,
    /// First squash cause observed, when the attack was stopped transiently.
    pub squash: Option<SquashCause>,
    /// Architectural fault, when the attack was stopped architecturally.
    pub fault: Option<Fault>,
}

pub struct AttackContext<'a> {
    pub program: &'a AsmProgram,
    pub scenario: &'a AttackScenario,
    pub config: SimConfig,
}

impl<'a> AttackContext<'a> {
    pub fn new(
        program: &'a AsmProgram,
        scenario: &'a AttackScenario,
        config: &SimConfig,
    ) -> AttackContext<'a> {
        let mut config = config.clone();
        if let Some(w) = scenario.window {
            config.window = w;
        }
        AttackContext {
            program,
            scenario,
            config,
        }
    }
}

pub trait AttackRunner {
    fn variant(&self) -> Variant;
    fn run(&self, cx: &AttackContext<'_>) -> Result<LeakVerdict, AttackError>;
}

/// Registry of runners keyed by variant name.
pub struct AttackRegistry {
    runners: BTreeMap<&'static str, Box<dyn AttackRunner + Send + Sync>>,
}

impl AttackRegistry {
    pub fn empty() -> AttackRegistry {
        AttackRegistry {
            runners: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, runner: Box<dyn AttackRunner + Send + Sync>) {
        self.runners.insert(runner.variant().name(), runner);
    }

    pub fn with_default_runners() -> AttackRegistry {
        let mut r = AttackRegistry::empty();
        r.register(Box::new(V1Runner));
        r.register(Box::new(V2Runner));
        r.register(Box::new(V5Runner));
        r.register(Box::new(PacmanRunner));
        r.register(Box::new(DopRunner));
        r.register(Box::new(CfiHijackRunner));
        r
    }

    pub fn get(&self, name: &str) -> Option<&(dyn AttackRunner + Send + Sync)> {
        self.runners.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.runners.keys().copied().collect()
    }

    pub fn run(
        &self,
        program: &AsmProgram,
        scenario: &AttackScenario,
        config: &SimConfig,
    ) -> Result<LeakVerdict, AttackError> {
        let runner = self
            .get(scenario.variant.name())
            .ok_or_else(|| AttackError::UnknownVariant(scenario.variant.name().to_string()))?;
        let cx = AttackContext::new(program, scenario, config);
        runner.run(&cx)
    }
}

/// Dispatch through the default registry.
pub fn run_attack(
    program: &AsmProgram,
    scenario: &AttackScenario,
    config: &SimConfig,
) -> Result<LeakVerdict, AttackError> {
    AttackRegistry::with_default_runners().run(program, scenario, config)
}

/// Apply the scenario's pre-run attacker writes to a prepared machine
/// state; returns the location-triggered writes for the executor.
pub(crate) fn apply_writes(
    image: &Image,
    st: &mut MachineState,
    scenario: &AttackScenario,
) -> Result<Vec<(crate::asm::Loc, u64, u8)>, AttackError> {
    let mut triggers = Vec::new();
    for w in &scenario.writes {
        match w {
            WriteDirective::Byte(spec, v) => {
                let addr = resolve_addr(image, spec)?;
                st.mem.insert(addr, *v);
            }
            WriteDirective::ByteAt(loc, spec, v) => {
                let addr = resolve_addr(image, spec)?;
                triggers.push((loc.clone(), addr, *v));
            }
            WriteDirective::Quad(spec, src) => {
                let addr = resolve_addr(image, spec)?;
                let value = match src {
                    QuadSource::Value(v) => *v,
                    QuadSource::Symbol(s) => image
                        .code_addr(s)
                        .or_else(|| image.data_addr(s))
                        .ok_or_else(|| {
                            AttackError::Scenario(format!("unknown symbol '{s}' in write_quad"))
                        })?,
                };
                for (k, byte) in value.to_le_bytes().iter().enumerate() {
                    st.mem.insert(addr + k as u64, *byte);
                }
            }
        }
    }
    Ok(triggers)
}

pub(crate) fn resolve_addr(image: &Image, spec: &str) -> Result<u64, AttackError> {
    if let Some(hex) = spec.strip_prefix("0x") {
        return u64::from_str_radix(hex, 16)
            .map_err(|_| AttackError::Scenario(format!("bad address '{spec}'")));
    }
    image
        .data_addr(spec)
        .ok_or_else(|| AttackError::Scenario(format!("unknown region in '{spec}'")))
}

/// Decode probe-region lines into byte values: line index within the probe
/// region at a 64-byte stride, the flush+reload read-out.
pub(crate) fn decode_probe_lines(image: &Image, probe: &str, lines: &[u64]) -> Vec<u8> {
    let Some(base) = image.region_addrs.get(probe) else {
        return Vec::new();
    };
    let base_line = base / super::machine::CACHE_LINE;
    let mut out = Vec::new();
    for l in lines {
        if *l >= base_line && *l < base_line + 256 {
            out.push((*l - base_line) as u8);
        }
    }
    out
}

/// Restrict decoded bytes to ones that actually occur in the secret region.
pub(crate) fn match_secret(
    image: &Image,
    st_mem: &std::collections::BTreeMap<u64, u8>,
    secret: &str,
    decoded: &[u8],
) -> Vec<u8> {
    let Some(base) = image.region_addrs.get(secret) else {
        return Vec::new();
    };
    let len = image.region_lens.get(secret).copied().unwrap_or(0);
    let secret_bytes: Vec<u8> = (0..len)
        .map(|i| st_mem.get(&(base + i)).copied().unwrap_or(0))
        .collect();
    decoded
        .iter()
        .copied()
        .filter(|b| secret_bytes.contains(b))
        .collect()
}
