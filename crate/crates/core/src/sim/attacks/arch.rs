//! Architectural attacks: DOP writes to branch variables and function-pointer
//! hijacks. No misprediction is involved; the verdict comes from whether the
//! corrupted run reaches its observable effect or faults first.

use crate::sim::exec::{Machine, Outcome};
use crate::sim::machine::Image;
use crate::sim::scenario::Variant;

use super::{
    apply_writes, decode_probe_lines, match_secret, AttackContext, AttackError, AttackRunner,
    LeakVerdict,
};

fn run_architectural_attack(cx: &AttackContext<'_>) -> Result<LeakVerdict, AttackError> {
    let sc = cx.scenario;
    let probe = sc
        .probe
        .as_ref()
        .ok_or_else(|| AttackError::Scenario("missing probe region".into()))?;
    let secret = sc
        .secret
        .as_ref()
        .ok_or_else(|| AttackError::Scenario("missing secret region".into()))?;

    let image = Image::load(cx.program);
    let machine = Machine::new(&image, &cx.config);
    let mut st = machine.initial_state(&sc.entry, &sc.inits)?;
    let triggers = apply_writes(&image, &mut st, sc)?;
    let run = machine.run_prepared(st, None, &triggers)?;

    let fault = match &run.outcome {
        Outcome::Fault(f) => Some(f.clone()),
        Outcome::Returned => None,
    };
    // The attack's observable effect is an architectural probe access.
    let decoded = decode_probe_lines(&image, probe, &run.trace.architectural_lines());
    let recovered = match_secret(&image, &run.state.mem, secret, &decoded);
    Ok(LeakVerdict {
        leaked: fault.is_none() && !recovered.is_empty(),
        recovered_bytes: if fault.is_none() { recovered } else { Vec::new() },
        trace: run.trace,
        squash: None,
        fault,
    })
}

/// Data-oriented attack: corrupt a branch variable in memory.
pub struct DopRunner;

impl AttackRunner for DopRunner {
    fn variant(&self) -> Variant {
        Variant::Dop
    }

    fn run(&self, cx: &AttackContext<'_>) -> Result<LeakVerdict, AttackError> {
        run_architectural_attack(cx)
    }
}

/// Control-flow hijack: redirect a function pointer to a wrong-class target.
pub struct CfiHijackRunner;

impl AttackRunner for CfiHijackRunner {
    fn variant(&self) -> Variant {
        Variant::CfiHijack
    }

    fn run(&self, cx: &AttackContext<'_>) -> Result<LeakVerdict, AttackError> {
        run_architectural_attack(cx)
    }
}
