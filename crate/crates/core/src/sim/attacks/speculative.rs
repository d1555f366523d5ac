//! Spectre V1/V2/V5: one mistrained episode, then flush+reload decoding of
//! the transient probe footprint.

use crate::sim::exec::{Machine, Mistrain, Outcome};
use crate::sim::machine::Image;
use crate::sim::scenario::Variant;

use super::{
    apply_writes, decode_probe_lines, match_secret, AttackContext, AttackError, AttackRunner,
    LeakVerdict,
};

fn run_speculative_leak(
    cx: &AttackContext<'_>,
    expect: fn(&Mistrain) -> bool,
) -> Result<LeakVerdict, AttackError> {
    let sc = cx.scenario;
    let mistrain = sc
        .mistrain
        .as_ref()
        .ok_or_else(|| AttackError::Scenario("missing mistrain directive".into()))?;
    if !expect(mistrain) {
        return Err(AttackError::Scenario(format!(
            "mistrain kind does not fit variant '{}'",
            sc.variant.name()
        )));
    }
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
    let run = machine.run_prepared(st, Some(mistrain), &triggers)?;

    let decoded = decode_probe_lines(&image, probe, &run.trace.transient_lines());
    let recovered = match_secret(&image, &run.state.mem, secret, &decoded);
    let squash = run.trace.squashes().first().map(|(_, c)| *c);
    let fault = match run.outcome {
        Outcome::Fault(f) => Some(f),
        Outcome::Returned => None,
    };
    Ok(LeakVerdict {
        leaked: !recovered.is_empty(),
        recovered_bytes: recovered,
        trace: run.trace,
        squash,
        fault,
    })
}

/// Conditional-branch misprediction.
pub struct V1Runner;

impl AttackRunner for V1Runner {
    fn variant(&self) -> Variant {
        Variant::V1
    }

    fn run(&self, cx: &AttackContext<'_>) -> Result<LeakVerdict, AttackError> {
        run_speculative_leak(cx, |m| matches!(m, Mistrain::Branch { .. }))
    }
}

/// Indirect-branch target injection.
pub struct V2Runner;

impl AttackRunner for V2Runner {
    fn variant(&self) -> Variant {
        Variant::V2
    }

    fn run(&self, cx: &AttackContext<'_>) -> Result<LeakVerdict, AttackError> {
        run_speculative_leak(cx, |m| matches!(m, Mistrain::Indirect { .. }))
    }
}

/// Return-stack-buffer misprediction.
pub struct V5Runner;

impl AttackRunner for V5Runner {
    fn variant(&self) -> Variant {
        Variant::V5
    }

    fn run(&self, cx: &AttackContext<'_>) -> Result<LeakVerdict, AttackError> {
        run_speculative_leak(cx, |m| matches!(m, Mistrain::Return { .. }))
    }
}
