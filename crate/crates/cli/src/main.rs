//! Batch driver for the hardening pipeline: analyze, harden, validate,
//! and simulate.
//!
//! Exit codes: 0 on success (or no leak for `simulate`), 1 on a validation
//! violation or a leak, 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use janus_core::analysis::{analyze_program, parse_sidecar, resolve_pending_spectre, TagOverrides};
use janus_core::asm::{emit_program, parse_program, AsmProgram};
use janus_core::instrument::{harden, strip_spectre, HardenContext, HardenOptions};
use janus_core::policy::{emit_policy, load_external_policy, InstrumentationPlan, PolicySet};
use janus_core::sim::attacks::run_attack;
use janus_core::sim::{parse_scenario, SimConfig};
use janus_core::validator::{stats, validate};

#[derive(Parser)]
#[command(
    name = "janus",
    about = "ARM64 assembly hardening with PA/BTI defenses and a speculative-execution simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the internal analyses and write the derived policy set.
    Analyze(AnalyzeArgs),
    /// Instrument a program under its policies.
    Harden(HardenArgs),
    /// Check a hardened program against its plan and policies.
    Validate(ValidateArgs),
    /// Run an attack scenario and report the leak verdict.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Assembly source file.
    asm: PathBuf,
    /// Signature / input-region sidecar file.
    #[arg(long)]
    sidecar: PathBuf,
    /// Output policy file (stdout when omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Modifier assignment seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pin a tag: `--pin class:handler=0x9c2` (repeatable).
    #[arg(long = "pin")]
    pins: Vec<String>,
}

#[derive(Args)]
struct HardenArgs {
    /// Assembly source file.
    asm: PathBuf,
    /// Signature / input-region sidecar file.
    #[arg(long)]
    sidecar: PathBuf,
    /// External policy files to merge in (repeatable).
    #[arg(long = "policy")]
    policies: Vec<PathBuf>,
    /// Hardened assembly output path.
    #[arg(short, long)]
    output: PathBuf,
    /// Plan output path (defaults to `<output>.plan.json`).
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Merged-policy output path (defaults to `<output>.policy`).
    #[arg(long)]
    emit_policy_file: Option<PathBuf>,
    /// Enable modifier fusion (the default).
    #[arg(long = "mf", conflicts_with = "no_mf")]
    mf: bool,
    /// Disable modifier fusion.
    #[arg(long = "no-mf")]
    no_mf: bool,
    /// Enable carrier reuse (the default).
    #[arg(long = "cr", conflicts_with = "no_cr")]
    cr: bool,
    /// Disable carrier reuse.
    #[arg(long = "no-cr")]
    no_cr: bool,
    /// Remove speculation-specific instructions after hardening, keeping
    /// the architectural checks (net-overhead accounting).
    #[arg(long)]
    strip_janus: bool,
    /// Modifier assignment seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pin a tag: `--pin class:handler=0x9c2` (repeatable).
    #[arg(long = "pin")]
    pins: Vec<String>,
    /// Print instruction-count statistics.
    #[arg(long)]
    print_stats: bool,
}

#[derive(Args)]
struct ValidateArgs {
    /// Hardened assembly file.
    asm: PathBuf,
    /// Plan file written by `harden`.
    #[arg(long)]
    plan: PathBuf,
    /// Policy files (the merged set written by `harden`).
    #[arg(long = "policy")]
    policies: Vec<PathBuf>,
    /// Emit the report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file.
    scenario: PathBuf,
    /// Run the unhardened program named by the scenario (default).
    #[arg(long, conflicts_with = "after")]
    before: bool,
    /// Run the hardened program named by the scenario.
    #[arg(long)]
    after: bool,
    /// Print the cache trace.
    #[arg(long)]
    dump_trace: bool,
    /// Speculation window override.
    #[arg(long)]
    window: Option<u32>,
}

fn parse_pins(pins: &[String]) -> Result<TagOverrides> {
    let mut out = TagOverrides::new();
    for p in pins {
        let (key, value) = p
            .split_once('=')
            .with_context(|| format!("pin '{p}' must be <key>=<hex>"))?;
        let value = value.trim_start_matches("0x");
        let v = u16::from_str_radix(value, 16)
            .with_context(|| format!("pin '{p}' has a malformed tag"))?;
        out.insert(key.to_string(), v);
    }
    Ok(out)
}

fn read_program(path: &Path) -> Result<AsmProgram> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = parse_program(&text).with_context(|| format!("parsing {}", path.display()))?;
    for w in &parsed.warnings {
        eprintln!(
            "warning: {}: line {}: {}",
            path.display(),
            w.line,
            w.message
        );
    }
    Ok(parsed.program)
}

fn load_policies(paths: &[PathBuf]) -> Result<PolicySet> {
    let mut merged = PolicySet::default();
    for path in paths {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let set = load_external_policy(&text)
            .with_context(|| format!("parsing policy {}", path.display()))?;
        let (m, warnings) = PolicySet::merge(&merged, &set);
        for w in warnings {
            eprintln!("warning: {}", w.message);
        }
        merged = m;
    }
    Ok(merged)
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<u8> {
    let program = read_program(&args.asm)?;
    let sidecar_text = std::fs::read_to_string(&args.sidecar)
        .with_context(|| format!("reading {}", args.sidecar.display()))?;
    let sidecar = parse_sidecar(&sidecar_text)?;
    let overrides = parse_pins(&args.pins)?;
    let out = analyze_program(&program, &sidecar, args.seed, &overrides)?;
    let text = emit_policy(&out.policies);
    match &args.output {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_harden(args: &HardenArgs) -> Result<u8> {
    let program = read_program(&args.asm)?;
    let sidecar_text = std::fs::read_to_string(&args.sidecar)
        .with_context(|| format!("reading {}", args.sidecar.display()))?;
    let sidecar = parse_sidecar(&sidecar_text)?;
    let overrides = parse_pins(&args.pins)?;
    let analysis = analyze_program(&program, &sidecar, args.seed, &overrides)?;

    let mut policies = analysis.policies.clone();
    if !args.policies.is_empty() {
        let mut external = load_policies(&args.policies)?;
        resolve_pending_spectre(&mut external, &analysis.candidates)?;
        let (merged, warnings) = PolicySet::merge(&policies, &external);
        for w in warnings {
            eprintln!("warning: {}", w.message);
        }
        policies = merged;
    }
    policies
        .validate_locs(&program)
        .context("policy refers to a location missing from the program")?;

    let ctx = HardenContext {
        candidates: analysis.candidates.clone(),
        class_members: policies.target_tags.keys().cloned().collect(),
    };
    let opts = HardenOptions {
        mf: !args.no_mf,
        cr: !args.no_cr,
    };
    let (mut hardened, plan) = harden(&program, &policies, &ctx, opts)?;
    if args.strip_janus {
        hardened = strip_spectre(&hardened);
    }

    let asm_text = emit_program(&hardened)?;
    std::fs::write(&args.output, asm_text)
        .with_context(|| format!("writing {}", args.output.display()))?;

    let plan_path = args
        .plan
        .clone()
        .unwrap_or_else(|| with_suffix(&args.output, ".plan.json"));
    std::fs::write(&plan_path, plan.to_json())
        .with_context(|| format!("writing {}", plan_path.display()))?;

    let policy_path = args
        .emit_policy_file
        .clone()
        .unwrap_or_else(|| with_suffix(&args.output, ".policy"));
    std::fs::write(&policy_path, emit_policy(&policies))
        .with_context(|| format!("writing {}", policy_path.display()))?;

    if args.print_stats {
        print!("{}", stats(&program, &hardened));
    }
    Ok(0)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_validate(args: &ValidateArgs) -> Result<u8> {
    let program = read_program(&args.asm)?;
    let plan_text = std::fs::read_to_string(&args.plan)
        .with_context(|| format!("reading {}", args.plan.display()))?;
    let plan = InstrumentationPlan::from_json(&plan_text)
        .with_context(|| format!("parsing plan {}", args.plan.display()))?;
    let policies = load_policies(&args.policies)?;
    let report = validate(&program, &plan, &policies);
    if args.json {
        println!("{}", report.to_json());
    } else if !report.passed() {
        print!("{}", report.render_text());
    }
    if report.passed() {
        println!("validation passed: 0 violations");
        Ok(0)
    } else {
        println!(
            "validation failed: {} violation(s)",
            report.violations.len()
        );
        Ok(1)
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading {}", args.scenario.display()))?;
    let scenario = parse_scenario(&text)?;
    let base = args.scenario.parent().unwrap_or(Path::new("."));

    let program_path = if args.after {
        scenario
            .hardened_path
            .as_ref()
            .context("scenario has no 'hardened' line; --after needs one")?
    } else {
        scenario
            .program_path
            .as_ref()
            .context("scenario has no 'program' line")?
    };
    let program = read_program(&base.join(program_path))?;

    let mut cfg = SimConfig::default();
    if let Some(w) = args.window {
        cfg.window = w;
    }
    let verdict = run_attack(&program, &scenario, &cfg)?;

    if args.dump_trace {
        print!("{}", verdict.trace.dump());
    }
    if verdict.leaked {
        let bytes: Vec<String> = verdict
            .recovered_bytes
            .iter()
            .map(|b| format!("{b:#04x}"))
            .collect();
        println!("leaked: yes ({})", bytes.join(" "));
        Ok(1)
    } else {
        match (&verdict.squash, &verdict.fault) {
            (Some(cause), _) => println!("leaked: no (squashed: {cause})"),
            (None, Some(fault)) => println!("leaked: no (faulted: {fault})"),
            (None, None) => println!("leaked: no"),
        }
        Ok(0)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Harden(args) => cmd_harden(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
