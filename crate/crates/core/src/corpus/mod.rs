//! Built-in victim programs, attack scenarios, and policies used by the
//! test suite, the acceptance gate, and the examples shipped with the CLI.
//!
//! Each case bundles one assembly program with its signature sidecar, an
//! optional external policy, and a scenario description. Gadget structure
//! varies deliberately across each family; the defense story must not
//! depend on any particular shape.

use crate::analysis::{analyze_program, AnalysisError, AnalysisOutput, Sidecar, TagOverrides};
use crate::asm::{parse_program, AsmProgram, ParseError};
use crate::instrument::{harden, HardenContext, HardenOptions, InstrumentError};
use crate::policy::{load_external_policy, InstrumentationPlan, PolicyError, PolicySet};
use crate::sim::{parse_scenario, AttackScenario, ScenarioError};

use thiserror::Error;

#[derive(Debug, Clone)]
pub struct CorpusCase {
    pub name: String,
    pub asm: String,
    pub sidecar: String,
    pub external_policy: Option<String>,
    pub scenario: Option<String>,
    pub overrides: TagOverrides,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("sidecar: {0}")]
    Sidecar(AnalysisError),
}

/// A case taken through the full pipeline.
pub struct PreparedCase {
    pub name: String,
    pub program: AsmProgram,
    pub hardened: AsmProgram,
    pub plan: InstrumentationPlan,
    pub policies: PolicySet,
    pub analysis: AnalysisOutput,
    pub scenario: Option<AttackScenario>,
    pub sidecar: Sidecar,
}

/// Parse, analyze, merge external policies, and harden one case.
pub fn prepare(case: &CorpusCase, opts: HardenOptions, seed: u64) -> Result<PreparedCase, CorpusError> {
    let program = parse_program(&case.asm)?.program;
    let sidecar = crate::analysis::parse_sidecar(&case.sidecar).map_err(CorpusError::Sidecar)?;
    let analysis = analyze_program(&program, &sidecar, seed, &case.overrides)?;
    let mut policies = analysis.policies.clone();
    if let Some(text) = &case.external_policy {
        let mut external = load_external_policy(text)?;
        crate::analysis::resolve_pending_spectre(&mut external, &analysis.candidates)?;
        let (merged, _warnings) = PolicySet::merge(&policies, &external);
        policies = merged;
    }
    policies.validate_locs(&program)?;
    let ctx = HardenContext {
        candidates: analysis.candidates.clone(),
        class_members: policies.target_tags.keys().cloned().collect(),
    };
    let (hardened, plan) = harden(&program, &policies, &ctx, opts)?;
    let scenario = match &case.scenario {
        Some(text) => Some(parse_scenario(text)?),
        None => None,
    };
    Ok(PreparedCase {
        name: case.name.clone(),
        program,
        hardened,
        plan,
        policies,
        analysis,
        scenario,
        sidecar,
    })
}

fn case(
    name: &str,
    asm: String,
    sidecar: &str,
    external_policy: Option<String>,
    scenario: Option<String>,
) -> CorpusCase {
    CorpusCase {
        name: name.to_string(),
        asm,
        sidecar: sidecar.to_string(),
        external_policy,
        scenario,
        overrides: TagOverrides::new(),
    }
}

const SECRET_BYTE: u8 = 0x5a;

/// Data tail shared by the bounds-check gadgets. Region order fixes the
/// arr-to-secret offset at two slots (0x10000).
fn v1_data(input_value: &str) -> String {
    format!(
        "\n.data\ninput:\n\t.quad {input_value}\nbound:\n\t.quad 0x4\narr:\n\t.byte 0x1, 0x2, 0x3, 0x4\nsink_pad:\n\t.quad 0\nsecret:\n\t.byte {SECRET_BYTE:#x}\nprobe:\n\t.byte 0x0\n"
    )
}

/// Offset from `arr` to `secret` in the layout above: two 0x8000 slots.
const V1_OOB_OFFSET: &str = "0x10000";

pub fn v1_cases() -> Vec<CorpusCase> {
    let mut out = Vec::new();

    // (a) classic: fallthrough-guarded byte gadget.
    out.push(case(
        "v1-classic",
        format!(
            "\
.global main
main:
.bb1:
\tmov x20, =input
\tldr x9, [x20]
\tmov x21, =bound
\tldr x1, [x21]
\tcmp x9, x1
\tb.ge .bb3
.bb2:
\tmov x22, =arr
\tldrb w10, [x22, x9]
\tmov x23, =probe
\tlsl x10, x10, #6
\tldrb w12, [x23, x10]
\tb .bb3
.bb3:
\tmov x0, #0
\tret
{}",
            v1_data(V1_OOB_OFFSET)
        ),
        "input input\n",
        None,
        Some(
            "variant v1\nentry main\nmistrain branch main:.bb1:5 nottaken\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    // (b) guarded side on the taken edge.
    out.push(case(
        "v1-taken-guard",
        format!(
            "\
.global main
main:
.bb1:
\tmov x20, =input
\tldr x9, [x20]
\tmov x21, =bound
\tldr x1, [x21]
\tcmp x9, x1
\tb.lt .bb3
.bb2:
\tmov x0, #0
\tret
.bb3:
\tmov x22, =arr
\tldrb w10, [x22, x9]
\tmov x23, =probe
\tlsl x10, x10, #6
\tldrb w12, [x23, x10]
\tmov x0, #0
\tret
{}",
            v1_data(V1_OOB_OFFSET)
        ),
        "input input\n",
        None,
        Some(
            "variant v1\nentry main\nmistrain branch main:.bb1:5 taken\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    // (c) masked secret byte before transmission.
    out.push(case(
        "v1-masked",
        format!(
            "\
.global main
main:
.bb1:
\tmov x20, =input
\tldr x9, [x20]
\tmov x21, =bound
\tldr x1, [x21]
\tcmp x9, x1
\tb.ge .bb3
.bb2:
\tmov x22, =arr
\tldrb w10, [x22, x9]
\tand x10, x10, #0xff
\tmov x23, =probe
\tlsl x10, x10, #6
\tldrb w12, [x23, x10]
\tb .bb3
.bb3:
\tmov x0, #0
\tret
{}",
            v1_data(V1_OOB_OFFSET)
        ),
        "input input\n",
        None,
        Some(
            "variant v1\nentry main\nmistrain branch main:.bb1:5 nottaken\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    // (d) pointer derived from the index inside the guarded block.
    out.push(case(
        "v1-derived-pointer",
        format!(
            "\
.global main
main:
.bb1:
\tmov x20, =input
\tldr x9, [x20]
\tmov x21, =bound
\tldr x1, [x21]
\tcmp x9, x1
\tb.ge .bb3
.bb2:
\tmov x22, =arr
\tadd x25, x22, x9
\tldrb w10, [x25]
\tmov x23, =probe
\tlsl x10, x10, #6
\tldrb w12, [x23, x10]
\tb .bb3
.bb3:
\tmov x0, #0
\tret
{}",
            v1_data(V1_OOB_OFFSET)
        ),
        "input input\n",
        None,
        Some(
            "variant v1\nentry main\nmistrain branch main:.bb1:5 nottaken\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    // (e) full-width transmission load.
    out.push(case(
        "v1-wide-transmit",
        format!(
            "\
.global main
main:
.bb1:
\tmov x20, =input
\tldr x9, [x20]
\tmov x21, =bound
\tldr x1, [x21]
\tcmp x9, x1
\tb.ge .bb3
.bb2:
\tmov x22, =arr
\tldrb w10, [x22, x9]
\tmov x23, =probe
\tlsl x10, x10, #6
\tldr x13, [x23, x10]
\tb .bb3
.bb3:
\tmov x0, #0
\tret
{}",
            v1_data(V1_OOB_OFFSET)
        ),
        "input input\n",
        None,
        Some(
            "variant v1\nentry main\nmistrain branch main:.bb1:5 nottaken\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    // (f) inverted comparison direction.
    out.push(case(
        "v1-gt-guard",
        format!(
            "\
.global main
main:
.bb1:
\tmov x20, =input
\tldr x9, [x20]
\tmov x21, =bound
\tldr x1, [x21]
\tcmp x9, x1
\tb.gt .bb3
.bb2:
\tmov x22, =arr
\tldrb w10, [x22, x9]
\tmov x23, =probe
\tlsl x10, x10, #6
\tldrb w12, [x23, x10]
\tb .bb3
.bb3:
\tmov x0, #0
\tret
{}",
            v1_data(V1_OOB_OFFSET)
        ),
        "input input\n",
        None,
        Some(
            "variant v1\nentry main\nmistrain branch main:.bb1:5 nottaken\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    out
}

/// Data tail for the dispatch gadgets.
fn v2_data(extra_tables: &str) -> String {
    format!(
        "\n.data\ntable:\n\t.quad handler_a\n{extra_tables}secret:\n\t.byte {SECRET_BYTE:#x}\nprobe:\n\t.byte 0x0\n"
    )
}

/// A self-contained disclosure body reading the secret and transmitting it.
fn disclosure_body() -> &'static str {
    "\tmov x20, =secret\n\tldrb w10, [x20]\n\tmov x23, =probe\n\tlsl x10, x10, #6\n\tldrb w12, [x23, x10]\n"
}

pub fn v2_cases() -> Vec<CorpusCase> {
    let mut out = Vec::new();
    let dispatch_main = "\
.global main
main:
.bb1:
\tstr x30, [sp, #8]
\tmov x24, =table
\tldr x8, [x24]
\tmov x0, #5
\tblr x8
.bb2:
\tldr x30, [sp, #8]
\tmov x0, #0
\tret
handler_a:
\tmov x2, #1
\tret
";

    // (a) raw gadget outside any class: no landing pad after hardening.
    out.push(case(
        "v2-raw-gadget",
        format!(
            "{dispatch_main}evil:\n{}\tret\n{}",
            disclosure_body(),
            v2_data("")
        ),
        "sig handler_a 1 0\n",
        None,
        Some(
            "variant v2\nentry main\nmistrain indirect main:.bb1:4 evil\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    // (b) wrong-class member carrying a disclosure body.
    out.push(case(
        "v2-wrong-class",
        format!(
            "{dispatch_main}evil_b:\n{}\tret\n{}",
            disclosure_body(),
            v2_data("table2:\n\t.quad evil_b\n")
        ),
        "sig handler_a 1 0\nsig evil_b 2 0\n",
        None,
        Some(
            "variant v2\nentry main\nmistrain indirect main:.bb1:4 evil_b\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    // (c) dead block inside the victim as the forced target.
    out.push(case(
        "v2-dead-block",
        format!(
            "\
.global main
main:
.bb1:
\tstr x30, [sp, #8]
\tmov x24, =table
\tldr x8, [x24]
\tmov x0, #5
\tblr x8
.bb2:
\tldr x30, [sp, #8]
\tmov x0, #0
\tret
.bbdead:
{}\tret
handler_a:
\tmov x2, #1
\tret
{}",
            disclosure_body(),
            v2_data("")
        ),
        "sig handler_a 1 0\n",
        None,
        Some(
            "variant v2\nentry main\nmistrain indirect main:.bb1:4 main:.bbdead\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    // (d) raw gadget with a derived pointer.
    out.push(case(
        "v2-derived-gadget",
        format!(
            "{dispatch_main}evil:\n\tmov x20, =secret\n\tadd x21, x20, #0\n\tldrb w10, [x21]\n\tmov x23, =probe\n\tlsl x10, x10, #6\n\tldrb w12, [x23, x10]\n\tret\n{}",
            v2_data("")
        ),
        "sig handler_a 1 0\n",
        None,
        Some(
            "variant v2\nentry main\nmistrain indirect main:.bb1:4 evil\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    // (e) wrong-class member, wide transmission.
    out.push(case(
        "v2-wrong-class-wide",
        format!(
            "{dispatch_main}evil_b:\n\tmov x20, =secret\n\tldrb w10, [x20]\n\tmov x23, =probe\n\tlsl x10, x10, #6\n\tldr x13, [x23, x10]\n\tret\n{}",
            v2_data("table2:\n\t.quad evil_b\n")
        ),
        "sig handler_a 1 0\nsig evil_b 2 0\n",
        None,
        Some(
            "variant v2\nentry main\nmistrain indirect main:.bb1:4 evil_b\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    // (f) two dispatch sites; the second is mistrained.
    out.push(case(
        "v2-second-site",
        format!(
            "\
.global main
main:
.bb1:
\tstr x30, [sp, #8]
\tmov x24, =table
\tldr x8, [x24]
\tmov x0, #5
\tblr x8
.bb2:
\tldr x8, [x24]
\tmov x0, #6
\tblr x8
.bb3:
\tldr x30, [sp, #8]
\tmov x0, #0
\tret
handler_a:
\tmov x2, #1
\tret
evil:
{}\tret
{}",
            disclosure_body(),
            v2_data("")
        ),
        "sig handler_a 1 0\n",
        None,
        Some(
            "variant v2\nentry main\nmistrain indirect main:.bb2:2 evil\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    out
}

pub fn v5_cases() -> Vec<CorpusCase> {
    let mut out = Vec::new();
    let call_main = "\
.global main
main:
.bb1:
\tstr x30, [sp, #8]
\tbl helper
.bb2:
\tldr x30, [sp, #8]
\tmov x0, #0
\tret
helper:
\tmov x2, #7
\tret
";

    // (a) forced return to a checked leaf entry carrying a gadget body.
    out.push(case(
        "v5-entry-leaf",
        format!(
            "{call_main}gadget_fn:\n{}\tret\n\n.data\ntable:\n\t.quad gadget_fn\nsecret:\n\t.byte {SECRET_BYTE:#x}\nprobe:\n\t.byte 0x0\n",
            disclosure_body()
        ),
        "sig gadget_fn 1 0\n",
        None,
        Some(
            "variant v5\nentry main\nmistrain return helper:helper:1 gadget_fn\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    // (b) forced return into a carrier-checked consumer.
    out.push(case(
        "v5-entry-carrier",
        format!(
            "\
.global main
main:
.bb1:
\tstr x30, [sp, #8]
\tmov x20, =argsrc
\tldr x0, [x20]
\tmov x24, =table
\tldr x8, [x24]
\tblr x8
.bb2:
\tbl helper
.bb3:
\tldr x30, [sp, #8]
\tmov x0, #0
\tret
helper:
\tmov x2, #7
\tret
consumer:
\tmov x22, =outbuf
\tstr x0, [x22]
{}\tret

.data
argsrc:
\t.quad 0x42
table:
\t.quad consumer
outbuf:
\t.quad 0
secret:
\t.byte {SECRET_BYTE:#x}
probe:
\t.byte 0x0
",
            disclosure_body()
        ),
        "sig consumer 1 0\ninput argsrc\n",
        Some(
            "dfi x0@main:.bb1:2 main:.bb1:2 src 0xcc\ndfi x0@main:.bb1:2 consumer:consumer:1 sink 0xcc\n"
                .to_string(),
        ),
        Some(
            "variant v5\nentry main\nmistrain return helper:helper:1 consumer\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    // (c) poisoned-modifier return into the guarded block of the caller.
    let guarded_return = |transmit: &str, name: &str| {
        case(
            name,
            format!(
                "\
.global main
main:
.bb1:
\tstr x30, [sp, #8]
\tmov x20, =input
\tldr x9, [x20]
\tmov x21, =bound
\tldr x1, [x21]
\tcmp x9, x1
\tb.ge .bb3
.bb2:
\tmov x22, =arr
\tldrb w10, [x22, x9]
\tmov x23, =probe
\tlsl x10, x10, #6
{transmit}\tb .bb3
.bb3:
\tbl helper
.bb4:
\tldr x30, [sp, #8]
\tmov x0, #0
\tret
helper:
\tmov x2, #7
\tret
{}",
                v1_data(V1_OOB_OFFSET)
            ),
            "input input\n",
            None,
            Some(
                "variant v5\nentry main\nmistrain return helper:helper:1 main:.bb2\nsecret secret\nprobe probe\n"
                    .to_string(),
            ),
        )
    };
    out.push(guarded_return("\tldrb w12, [x23, x10]\n", "v5-guarded-block"));

    // (d) leaf entry with masked transmission.
    out.push(case(
        "v5-entry-masked",
        format!(
            "{call_main}gadget_fn:\n\tmov x20, =secret\n\tldrb w10, [x20]\n\tand x10, x10, #0xff\n\tmov x23, =probe\n\tlsl x10, x10, #6\n\tldrb w12, [x23, x10]\n\tret\n\n.data\ntable:\n\t.quad gadget_fn\nsecret:\n\t.byte {SECRET_BYTE:#x}\nprobe:\n\t.byte 0x0\n"
        ),
        "sig gadget_fn 1 0\n",
        None,
        Some(
            "variant v5\nentry main\nmistrain return helper:helper:1 gadget_fn\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    // (e) guarded-block return with wide transmission.
    out.push(guarded_return("\tldr x13, [x23, x10]\n", "v5-guarded-wide"));

    // (f) leaf entry with derived pointer.
    out.push(case(
        "v5-entry-derived",
        format!(
            "{call_main}gadget_fn:\n\tmov x20, =secret\n\tadd x21, x20, #0\n\tldrb w10, [x21]\n\tmov x23, =probe\n\tlsl x10, x10, #6\n\tldrb w12, [x23, x10]\n\tret\n\n.data\ntable:\n\t.quad gadget_fn\nsecret:\n\t.byte {SECRET_BYTE:#x}\nprobe:\n\t.byte 0x0\n"
        ),
        "sig gadget_fn 1 0\n",
        None,
        Some(
            "variant v5\nentry main\nmistrain return helper:helper:1 gadget_fn\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    ));

    out
}

pub fn pacman_case() -> CorpusCase {
    case(
        "pacman-oracle",
        format!(
            "\
.global main
main:
.bb1:
\tmov x20, =rawsrc
\tldr x26, [x20]
\tmov x27, #0x777
\tpacda x26, x27
\tmov x21, =slot
\tstr x26, [x21]
\tmov x22, =input
\tldr x9, [x22]
\tmov x23, =limit
\tldr x1, [x23]
\tcmp x9, x1
\tb.ge .bb3
.bb2:
\tmov x24, =forged
\tldr x2, [x24, x9]
\tmov x19, #0x777
\tautda x2, x19
\tmov x25, =probe
\tldrb w13, [x25]
\tb .bb3
.bb3:
\tmov x0, #0
\tret

.data
rawsrc:
\t.quad 0x4321
slot:
\t.quad 0
input:
\t.quad 0x10
limit:
\t.quad 0x8
forged:
\t.quad 0
probe:
\t.byte 0x0
secret:
\t.byte {SECRET_BYTE:#x}
"
        ),
        "input input\n",
        None,
        Some(
            "variant pacman\nentry main\nmistrain branch main:.bb1:11 nottaken\npacman forged+0x10 0x4321 0x777\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    )
}

pub fn dop_case() -> CorpusCase {
    case(
        "dop-branch-variable",
        format!(
            "\
.global main
main:
.bb1:
\tmov x20, =input
\tldr x9, [x20]
\tmov x25, =flagslot
\tstr x9, [x25]
\tmov x21, =limit
\tldr x1, [x21]
\tldr x9, [x25]
\tcmp x9, x1
\tb.ge .bb3
.bb2:
\tmov x22, =secret
\tldrb w10, [x22]
\tmov x23, =probe
\tlsl x10, x10, #6
\tldrb w12, [x23, x10]
\tb .bb3
.bb3:
\tmov x0, #0
\tret

.data
input:
\t.quad 0x9
limit:
\t.quad 0x8
flagslot:
\t.quad 0
secret:
\t.byte {SECRET_BYTE:#x}
probe:
\t.byte 0x0
"
        ),
        "input input\n",
        None,
        Some(
            "variant dop\nentry main\nwrite_at main:.bb1:6 flagslot+0 0x00\nwrite_at main:.bb1:6 flagslot+1 0x00\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    )
}

pub fn cfi_hijack_case() -> CorpusCase {
    case(
        "cfi-hijack-wrong-class",
        format!(
            "\
.global main
main:
.bb1:
\tstr x30, [sp, #8]
\tmov x24, =table
\tldr x8, [x24]
\tmov x0, #5
\tblr x8
.bb2:
\tldr x30, [sp, #8]
\tmov x0, #0
\tret
handler_a:
\tmov x2, #1
\tret
evil:
{}\tret

.data
table:
\t.quad handler_a
table2:
\t.quad evil
secret:
\t.byte {SECRET_BYTE:#x}
probe:
\t.byte 0x0
",
            disclosure_body()
        ),
        "sig handler_a 1 0\nsig evil 2 0\n",
        None,
        Some(
            "variant cfi-hijack\nentry main\nwrite_quad table+0 evil\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    )
}

/// Two values carrying both an external DFI policy and an internal Spectre
/// policy at the same definition: the modifier-fusion corpus.
pub fn mf_overlap_case() -> CorpusCase {
    case(
        "mf-dual-pairs",
        "\
.global main
main:
.bb1:
\tmov x20, =input
\tldr x9, [x20]
\tmov x26, =flagsrc
\tldr x12, [x26]
\tmov x21, =bound
\tldr x1, [x21]
\tcmp x12, x1
\tb.ge .bb3
.bb2:
\tmov x22, =arr
\tldrb w10, [x22, x9]
\tmov x23, =probe
\tlsl x10, x10, #6
\tldrb w13, [x23, x10]
\tb .bb3
.bb3:
\tmov x27, =input2
\tldr x14, [x27]
\tcmp x12, x1
\tb.ge .bb5
.bb4:
\tmov x24, =arr2
\tldrb w15, [x24, x14]
\tmov x25, =probe
\tlsl x15, x15, #6
\tldrb w16, [x25, x15]
\tb .bb5
.bb5:
\tmov x0, #0
\tret

.data
input:
\t.quad 0x1
flagsrc:
\t.quad 0x2
bound:
\t.quad 0x4
arr:
\t.byte 0x1, 0x2, 0x3, 0x4
input2:
\t.quad 0x2
arr2:
\t.byte 0x5, 0x6, 0x7, 0x8
probe:
\t.byte 0x0
secret:
\t.byte 0x77
"
        .to_string(),
        "input input\ninput flagsrc\ninput input2\n",
        Some(
            "\
dfi x9@main:.bb1:1 main:.bb1:1 src 0x111
dfi x9@main:.bb1:1 main:.bb2:1 sink 0x111
dfi x14@main:.bb3:1 main:.bb3:1 src 0x222
dfi x14@main:.bb3:1 main:.bb4:1 sink 0x222
"
            .to_string(),
        ),
        None,
    )
}

/// Carrier-reuse corpus: a DFI-signed first argument rides into the callee
/// and the entry check consumes its verification.
pub fn cr_carrier_case() -> CorpusCase {
    case(
        "cr-carrier",
        "\
.global main
main:
.bb1:
\tstr x30, [sp, #8]
\tmov x20, =input
\tldr x0, [x20]
\tmov x24, =table
\tldr x8, [x24]
\tblr x8
.bb2:
\tldr x30, [sp, #8]
\tmov x0, #0
\tret
consumer:
\tmov x22, =outbuf
\tstr x0, [x22]
\tret

.data
input:
\t.quad 0x42
table:
\t.quad consumer
outbuf:
\t.quad 0
"
        .to_string(),
        "sig consumer 1 0\ninput input\n",
        Some(
            "dfi x0@main:.bb1:2 main:.bb1:2 src 0xcc\ndfi x0@main:.bb1:2 consumer:consumer:1 sink 0xcc\n"
                .to_string(),
        ),
        None,
    )
}

/// Non-leaf target without a carrier: the link-register fallback.
pub fn cr_lr_case() -> CorpusCase {
    case(
        "cr-link-register",
        "\
.global main
main:
.bb1:
\tstr x30, [sp, #8]
\tmov x24, =table
\tldr x8, [x24]
\tmov x0, #5
\tblr x8
.bb2:
\tldr x30, [sp, #8]
\tmov x0, #0
\tret
worker:
.wentry:
\tstr x30, [sp, #16]
\tbl inner
.w2:
\tldr x30, [sp, #16]
\tret
inner:
\tmov x2, #3
\tret

.data
table:
\t.quad worker
"
        .to_string(),
        "sig worker 1 0\n",
        None,
        None,
    )
}

/// The worked-example shape: data-flow window, bounds check, indirect
/// call, with the class and DFI tags pinned to recognizable values.
pub fn worked_example() -> CorpusCase {
    let mut c = case(
        "worked-example",
        format!(
            "\
.global victim
victim:
.bb1:
\tstr x30, [sp, #8]
\tmov x20, =input
\tmov x25, =idxslot
\tmov x21, =bound
\tldr x1, [x21]
\tb .bb2
.bb2:
\tldr x9, [x20]
\tstr x9, [x25]
\tb .bb3
.bb3:
\tldr x9, [x25]
\tcmp x9, x1
\tb.ge .bb5
.bb4:
\tmov x22, =arr
\tldrb w10, [x22, x9]
\tmov x23, =probe
\tlsl x10, x10, #6
\tldrb w12, [x23, x10]
\tb .bb5
.bb5:
\tb .bb6
.bb6:
\tmov x24, =handlers
\tldr x8, [x24]
\tmov x0, #1
\tblr x8
.bb7:
\tldr x30, [sp, #8]
\tmov x0, #0
\tret
handler_a:
\tmov x2, #1
\tret

.data
input:
\t.quad 0x18000
idxslot:
\t.quad 0
bound:
\t.quad 0x4
arr:
\t.byte 0x1, 0x2, 0x3, 0x4
probe:
\t.byte 0x0
handlers:
\t.quad handler_a
secret:
\t.byte {SECRET_BYTE:#x}
"
        ),
        "sig handler_a 1 0\ninput input\n",
        None,
        Some(
            "variant v1\nentry victim\nmistrain branch victim:.bb3:2 nottaken\nsecret secret\nprobe probe\n"
                .to_string(),
        ),
    );
    c.overrides.insert("class:handler_a".to_string(), 0x9c2);
    c.overrides
        .insert("dfi:x9@victim:.bb2:0".to_string(), 0x135);
    c
}

/// Every case that carries an attack scenario.
pub fn all_attack_cases() -> Vec<CorpusCase> {
    let mut out = Vec::new();
    out.extend(v1_cases());
    out.extend(v2_cases());
    out.extend(v5_cases());
    out.push(pacman_case());
    out.push(dop_case());
    out.push(cfi_hijack_case());
    out.push(worked_example());
    out
}

/// Every case, scenarios or not.
pub fn all_cases() -> Vec<CorpusCase> {
    let mut out = all_attack_cases();
    out.push(mf_overlap_case());
    out.push(cr_carrier_case());
    out.push(cr_lr_case());
    out
}

/// Region lookup helper for tests: declared region order matches layout.
pub fn region_names(case: &CorpusCase) -> Vec<String> {
    match parse_program(&case.asm) {
        Ok(parsed) => parsed.program.data.iter().map(|d| d.name.clone()).collect(),
        Err(_) => Vec::new(),
    }
}
