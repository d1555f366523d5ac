//! PACMAN-style PAC-guess oracle.
//!
//! The attacker forges the victim's signed slot with a guessed PAC and
//! drives a mistrained episode through a verification whose success gates
//! a probe load. When the traces for correct and incorrect guesses differ,
//! the oracle distinguishes the true PAC and the signature leaks. A full
//! 2^16 sweep is reduced to 16 deterministic sampled guesses, the true
//! value among them.

use crate::sim::exec::Machine;
use crate::sim::machine::Image;
use crate::sim::pac::{compute_pac, PacDomain, PAYLOAD_MASK};
use crate::sim::scenario::Variant;
use crate::sim::trace::CacheTrace;

use super::{apply_writes, resolve_addr, AttackContext, AttackError, AttackRunner, LeakVerdict};

pub const SAMPLED_GUESSES: u16 = 16;

/// One mistrained episode per sampled guess; returns `(guess, trace)` pairs.
/// The first sample is the true PAC.
pub fn guess_traces(cx: &AttackContext<'_>) -> Result<Vec<(u16, CacheTrace)>, AttackError> {
    let sc = cx.scenario;
    let params = sc
        .pacman
        .as_ref()
        .ok_or_else(|| AttackError::Scenario("missing pacman parameters".into()))?;
    let mistrain = sc
        .mistrain
        .as_ref()
        .ok_or_else(|| AttackError::Scenario("missing mistrain directive".into()))?;
    let image = Image::load(cx.program);
    let machine = Machine::new(&image, &cx.config);
    let slot_addr = resolve_addr(&image, &params.slot)?;
    let true_pac = compute_pac(params.raw, params.modifier, cx.config.pa_key, PacDomain::Data);
    let mut traces = Vec::new();
    for k in 0..SAMPLED_GUESSES {
        let guess = true_pac ^ k;
        let forged = (params.raw & PAYLOAD_MASK) | ((guess as u64) << 48);
        let mut st = machine.initial_state(&sc.entry, &sc.inits)?;
        let triggers = apply_writes(&image, &mut st, sc)?;
        for (i, byte) in forged.to_le_bytes().iter().enumerate() {
            st.mem.insert(slot_addr + i as u64, *byte);
        }
        let run = machine.run_prepared(st, Some(mistrain), &triggers)?;
        traces.push((guess, run.trace));
    }
    Ok(traces)
}

pub struct PacmanRunner;

impl AttackRunner for PacmanRunner {
    fn variant(&self) -> Variant {
        Variant::Pacman
    }

    fn run(&self, cx: &AttackContext<'_>) -> Result<LeakVerdict, AttackError> {
        let mut traces = guess_traces(cx)?;
        let reference: Vec<_> = traces[0].1.transient_events().into_iter().cloned().collect();
        let all_identical = traces.iter().all(|(_, t)| {
            t.transient_events().into_iter().cloned().collect::<Vec<_>>() == reference
        });
        let true_pac = traces[0].0;
        let (_, correct_trace) = traces.swap_remove(0);
        let squash = correct_trace.squashes().first().map(|(_, c)| *c);
        if all_identical {
            Ok(LeakVerdict {
                leaked: false,
                recovered_bytes: Vec::new(),
                trace: correct_trace,
                squash,
                fault: None,
            })
        } else {
            Ok(LeakVerdict {
                leaked: true,
                recovered_bytes: true_pac.to_le_bytes().to_vec(),
                trace: correct_trace,
                squash,
                fault: None,
            })
        }
    }
}
