//! Security-focused integration tests: the PAC-guess oracle, transient
//! noninterference, and squash totality over the corpus.

use janus_core::corpus;
use janus_core::instrument::HardenOptions;
use janus_core::sim::attacks::pacman::guess_traces;
use janus_core::sim::attacks::{run_attack, AttackContext};
use janus_core::sim::{Image, SimConfig, TraceEvent};

const SEED: u64 = 0x1234_5678;

fn full_opts() -> HardenOptions {
    HardenOptions { mf: true, cr: true }
}

#[test]
fn pacman_oracle_distinguishes_guesses_before_hardening() {
    let case = corpus::pacman_case();
    let prepared = corpus::prepare(&case, full_opts(), SEED).unwrap();
    let scenario = prepared.scenario.as_ref().unwrap();
    let cfg = SimConfig::default();

    let cx = AttackContext::new(&prepared.program, scenario, &cfg);
    let traces = guess_traces(&cx).unwrap();
    assert_eq!(traces.len(), 16);
    let dumps: Vec<String> = traces.iter().map(|(_, t)| t.dump()).collect();
    assert!(
        dumps.iter().any(|d| *d != dumps[0]),
        "correct and incorrect guesses must produce different traces"
    );

    let verdict = run_attack(&prepared.program, scenario, &cfg).unwrap();
    assert!(verdict.leaked);
    assert_eq!(verdict.recovered_bytes.len(), 2, "the 16-bit code leaks");
}

#[test]
fn pacman_traces_identical_after_hardening() {
    let case = corpus::pacman_case();
    let prepared = corpus::prepare(&case, full_opts(), SEED).unwrap();
    let scenario = prepared.scenario.as_ref().unwrap();
    let cfg = SimConfig::default();

    let cx = AttackContext::new(&prepared.hardened, scenario, &cfg);
    let traces = guess_traces(&cx).unwrap();
    assert_eq!(traces.len(), 16);
    let dumps: Vec<String> = traces.iter().map(|(_, t)| t.dump()).collect();
    for d in &dumps {
        assert_eq!(*d, dumps[0], "hardened guess traces must be byte-identical");
    }

    let verdict = run_attack(&prepared.hardened, scenario, &cfg).unwrap();
    assert!(!verdict.leaked);
    assert!(verdict.recovered_bytes.is_empty());
}

/// Transient traces of hardened programs must be independent of the secret.
#[test]
fn hardened_transient_traces_are_secret_independent() {
    let cfg = SimConfig::default();
    let mut cases = corpus::v1_cases();
    cases.extend(corpus::v2_cases());
    cases.extend(corpus::v5_cases());
    cases.push(corpus::worked_example());
    for case in cases {
        let prepared = corpus::prepare(&case, full_opts(), SEED).unwrap();
        let scenario = prepared.scenario.as_ref().unwrap();
        let secret = scenario.secret.clone().unwrap();

        let mut with_a = scenario.clone();
        with_a
            .writes
            .push(janus_core::sim::WriteDirective::Byte(format!("{secret}+0"), 0x11));
        let mut with_b = scenario.clone();
        with_b
            .writes
            .push(janus_core::sim::WriteDirective::Byte(format!("{secret}+0"), 0xee));

        let run_a = run_attack(&prepared.hardened, &with_a, &cfg).unwrap();
        let run_b = run_attack(&prepared.hardened, &with_b, &cfg).unwrap();
        let ta: Vec<_> = run_a.trace.transient_events().into_iter().cloned().collect();
        let tb: Vec<_> = run_b.trace.transient_events().into_iter().cloned().collect();
        assert_eq!(ta, tb, "{}: transient trace depends on the secret", case.name);
    }
}

/// After any PAC/BTI squash, no probe-region line appears later in the
/// same episode (the episode is over).
#[test]
fn no_probe_lines_after_squash() {
    let cfg = SimConfig::default();
    let mut cases = corpus::v1_cases();
    cases.extend(corpus::v2_cases());
    cases.extend(corpus::v5_cases());
    cases.push(corpus::worked_example());
    for case in cases {
        let prepared = corpus::prepare(&case, full_opts(), SEED).unwrap();
        let scenario = prepared.scenario.as_ref().unwrap();
        let verdict = run_attack(&prepared.hardened, scenario, &cfg).unwrap();

        let image = Image::load(&prepared.hardened);
        let probe = scenario.probe.as_ref().unwrap();
        let probe_base = image.region_addrs[probe] / 64;
        let mut squashed = false;
        for e in &verdict.trace.events {
            match e {
                TraceEvent::Squash { .. } => squashed = true,
                TraceEvent::Access {
                    line,
                    phase: janus_core::sim::Phase::Transient,
                } => {
                    assert!(
                        !(squashed && *line >= probe_base && *line < probe_base + 256),
                        "{}: probe line after squash",
                        case.name
                    );
                }
                _ => {}
            }
        }
        assert!(squashed, "{}: hardened episode never squashed", case.name);
    }
}
