//! Command-line front door: every experiment is runnable as one command.
//!
//! Exit codes: 0 success (audits: certified), 1 refuted / counterexample,
//! 2 configuration error, 3 runtime failure, 4 solver non-convergence,
//! 5 inconclusive audit.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pacecore::coreaudit::{audit_ex_post, certify_ex_ante, CertStatus};
use pacecore::equilibrium::{solve_pacing, verify_focal, PacingProfile, SolveConfig};
use pacecore::instances::{make_lower_bound, LowerBoundSpec, LowerBoundVariant};
use pacecore::mechanisms::{dwl_sup_scan, regularity_probe, Axiom, MechanismKind, ProbeConfig, ScanSpec};
use pacecore::model::{CostFunction, Instance};
use pacecore::reduction::{feasibility_audit, simulate, SimOptions, SimulationResult};
use pacecore::strategies::{deviation_gain, Strategy};
use pacecore::{Error, Real};

const EXIT_OK: u8 = 0;
const EXIT_REFUTED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_NO_CONVERGENCE: u8 = 4;
const EXIT_INCONCLUSIVE: u8 = 5;

#[derive(Parser)]
#[command(name = "pacecore", version, about = "Artificial-currency reduction experiments")]
struct Cli {
    /// Worker count accepted for compatibility; execution is deterministic
    /// and identical for every value.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Root seed override (also honored via the PACECORE_SEED variable).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the budget-ledger reduction and write trace + summary files.
    Simulate(SimulateArgs),
    /// Solve the pacing fixed point C_i(beta) = alpha_i.
    SolveBeta(SolveArgs),
    /// Check depletion times and realized spend at a pacing profile.
    VerifyFocal(FocalArgs),
    /// Certify or refute the ex-ante approximate core at a pacing profile.
    AuditExAnte(ExAnteArgs),
    /// Search a realized trace for blocking coalitions.
    AuditExPost(ExPostArgs),
    /// Estimate sup DWL over report profiles.
    DwlScan(DwlScanArgs),
    /// Probe the regularity axioms of a mechanism.
    Regularity(RegularityArgs),
    /// Emit a lower-bound instance.
    LbInstance(LbArgs),
    /// Paired deviation-gain estimate against a pacing baseline.
    DeviationTest(DeviationArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    mech: String,
    /// Pacing profile JSON (solve-beta output) providing per-agent scalars.
    #[arg(long)]
    beta: Option<PathBuf>,
    /// Inline comma-separated scalars, e.g. "0.5,0.5".
    #[arg(long)]
    betas: Option<String>,
    /// All agents report truthfully instead of scaling.
    #[arg(long, default_value_t = false)]
    truthful: bool,
    /// Horizon override.
    #[arg(long)]
    t: Option<u64>,
    #[arg(long, default_value = "trace.jsonl")]
    trace: PathBuf,
    #[arg(long, default_value = "summary.csv")]
    summary: PathBuf,
    /// Keep every stride-th trace record.
    #[arg(long, default_value_t = 1)]
    stride: u64,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    mech: String,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 40)]
    max_iters: usize,
    #[arg(long, default_value = "solved.json")]
    out: PathBuf,
}

#[derive(Args)]
struct FocalArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    mech: String,
    #[arg(long)]
    beta: PathBuf,
    #[arg(long, default_value_t = 200)]
    runs: u64,
    #[arg(long)]
    t: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExAnteArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    mech: String,
    #[arg(long)]
    beta: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value = "certificate.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ExPostArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    /// Comma-separated additive tolerances, e.g. "0.005,0.01,0.05".
    #[arg(long, default_value = "0.05")]
    delta: String,
    /// Optional pacing profile for the equilibrium search direction.
    #[arg(long)]
    beta: Option<PathBuf>,
    #[arg(long, default_value = "certificate.json")]
    out: PathBuf,
}

#[derive(Args)]
struct DwlScanArgs {
    #[arg(long)]
    mech: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 1.5)]
    max_report: f64,
    #[arg(long, default_value_t = 1e-3)]
    witness_eps: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RegularityArgs {
    #[arg(long)]
    mech: String,
    #[arg(long)]
    n: usize,
    /// Comma-separated axiom names, or "all".
    #[arg(long, default_value = "all")]
    axioms: String,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LbArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.01)]
    eps: f64,
    #[arg(long, default_value = "main_text")]
    variant: String,
    #[arg(long)]
    alpha_prime: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    t: u64,
    #[arg(long, default_value = "instance.json")]
    out: PathBuf,
}

#[derive(Args)]
struct DeviationArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    mech: String,
    #[arg(long)]
    beta: PathBuf,
    #[arg(long, default_value_t = 0)]
    agent: usize,
    /// Deviation: "truthful", or "scale:<factor>" multiplying the agent's
    /// baseline scalar.
    #[arg(long)]
    alt: String,
    #[arg(long, default_value_t = 200)]
    reps: u64,
    #[arg(long)]
    t: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(classify(&err))
        }
    }
}

fn classify(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Size(_) | Error::KindMismatch(_) | Error::Json(_) => EXIT_CONFIG,
        Error::NonConvergence { .. } => EXIT_NO_CONVERGENCE,
        Error::Io(_) | Error::Strategy { .. } | Error::Trace(_) => EXIT_RUNTIME,
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("PACECORE_SEED").ok().and_then(|s| s.parse().ok())
}

fn load_instance(path: &Path, seed_override: Option<u64>) -> Result<Instance, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read instance {}: {e}", path.display())))?;
    let mut inst = Instance::from_json(&text)?;
    if let Some(seed) = seed_override {
        inst.seed = seed;
    }
    Ok(inst)
}

fn load_profile(path: &Path) -> Result<PacingProfile, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read pacing profile {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn parse_kind(s: &str) -> Result<MechanismKind, Error> {
    s.parse()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<u8, Error> {
    let seed_override = cli.seed.or_else(env_seed);
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args, seed_override),
        Command::SolveBeta(args) => cmd_solve_beta(args, seed_override),
        Command::VerifyFocal(args) => cmd_verify_focal(args, seed_override),
        Command::AuditExAnte(args) => cmd_audit_ex_ante(args, seed_override),
        Command::AuditExPost(args) => cmd_audit_ex_post(args, seed_override),
        Command::DwlScan(args) => cmd_dwl_scan(args, seed_override),
        Command::Regularity(args) => cmd_regularity(args, seed_override),
        Command::LbInstance(args) => cmd_lb_instance(args, seed_override),
        Command::DeviationTest(args) => cmd_deviation_test(args, seed_override),
    }
}

fn strategies_for(args: &SimulateArgs, instance: &Instance) -> Result<Vec<Strategy>, Error> {
    let n = instance.n;
    if args.truthful {
        return Ok(vec![Strategy::Truthful; n]);
    }
    let beta: Vec<f64> = if let Some(path) = &args.beta {
        load_profile(path)?.beta
    } else if let Some(spec) = &args.betas {
        spec.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad beta entry {s:?}: {e}")))
            })
            .collect::<Result<_, _>>()?
    } else if let Some(embedded) = Strategy::from_instance(instance) {
        return Ok(embedded);
    } else {
        return Err(Error::Config(
            "simulate needs --beta, --betas, --truthful, or strategies embedded in the instance".into(),
        ));
    };
    if beta.len() != n {
        return Err(Error::Config(format!("{} scalars for n={n} agents", beta.len())));
    }
    Ok(beta.into_iter().map(Strategy::value_scaling).collect())
}

fn cmd_simulate(args: SimulateArgs, seed_override: Option<u64>) -> Result<u8, Error> {
    let instance = load_instance(&args.instance, seed_override)?;
    let kind = parse_kind(&args.mech)?;
    let strategies = strategies_for(&args, &instance)?;
    let opts = SimOptions {
        horizon: args.t,
        seed_override: None,
        sample_stream_index: 0,
        stride: args.stride,
    };
    let result = simulate(&instance, kind, &strategies, &opts)?;
    if args.stride == 1 && !feasibility_audit(&result, &instance)? {
        return Err(Error::Trace("feasibility audit failed on fresh simulation".into()));
    }
    let mut trace = Vec::new();
    result.write_trace(&mut trace)?;
    fs::write(&args.trace, trace)?;
    fs::write(&args.summary, result.summary_csv(&instance.shares))?;
    println!(
        "simulated T={} total_cost={:.3} (budget {:.3})",
        result.horizon,
        result.total_cost,
        instance.alpha() * result.horizon as f64
    );
    Ok(EXIT_OK)
}

fn cmd_solve_beta(args: SolveArgs, seed_override: Option<u64>) -> Result<u8, Error> {
    let instance = load_instance(&args.instance, seed_override)?;
    let kind = parse_kind(&args.mech)?;
    let cfg = SolveConfig {
        tol: args.tol,
        max_sweeps: args.max_iters,
        samples: args.samples,
        coarse_samples: (args.samples / 10).max(1_000),
        ..SolveConfig::default()
    };
    match solve_pacing(&instance, kind, &cfg) {
        Ok(profile) => {
            write_json(&args.out, &profile)?;
            println!("beta = {:?} (residuals {:?})", profile.beta, profile.residuals);
            Ok(EXIT_OK)
        }
        Err(Error::NonConvergence {
            iterations,
            max_residual,
            beta,
            residuals,
        }) => {
            let diagnostics = serde_json::json!({
                "converged": false,
                "iterations": iterations,
                "max_residual": max_residual,
                "beta": beta,
                "residuals": residuals,
            });
            write_json(&args.out, &diagnostics)?;
            eprintln!("solver did not converge after {iterations} sweeps (max residual {max_residual:.3e})");
            Ok(EXIT_NO_CONVERGENCE)
        }
        Err(other) => Err(other),
    }
}

fn cmd_verify_focal(args: FocalArgs, seed_override: Option<u64>) -> Result<u8, Error> {
    let instance = load_instance(&args.instance, seed_override)?;
    let kind = parse_kind(&args.mech)?;
    let profile = load_profile(&args.beta)?;
    let report = verify_focal(&instance, kind, &profile.beta, args.runs, args.t)?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    println!(
        "early depletion fraction {:.4} (threshold round {}), mean spend gap {:.4}",
        report.early_depletion_fraction, report.early_threshold, report.mean_abs_spend_gap_fraction
    );
    Ok(EXIT_OK)
}

fn cmd_audit_ex_ante(args: ExAnteArgs, seed_override: Option<u64>) -> Result<u8, Error> {
    let instance = load_instance(&args.instance, seed_override)?;
    let kind = parse_kind(&args.mech)?;
    let profile = load_profile(&args.beta)?;
    let cert = certify_ex_ante(&instance, kind, &profile.beta, args.gamma, args.samples, instance.seed)?;
    write_json(&args.out, &cert)?;
    println!("ex-ante audit at gamma={}: {:?}", args.gamma, cert.status);
    Ok(match cert.status {
        CertStatus::Certified => EXIT_OK,
        CertStatus::Refuted => EXIT_REFUTED,
        CertStatus::Inconclusive => EXIT_INCONCLUSIVE,
    })
}

fn cmd_audit_ex_post(args: ExPostArgs, seed_override: Option<u64>) -> Result<u8, Error> {
    let instance = load_instance(&args.instance, seed_override)?;
    let file = fs::File::open(&args.trace)
        .map_err(|e| Error::Config(format!("cannot read trace {}: {e}", args.trace.display())))?;
    let result = SimulationResult::read_trace(BufReader::new(file))?;
    let delta_grid: Vec<f64> = args
        .delta
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad delta entry {s:?}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let beta = match &args.beta {
        Some(path) => Some(load_profile(path)?.beta),
        None => None,
    };
    let report = audit_ex_post(
        &result,
        &instance,
        args.gamma,
        &delta_grid,
        beta.as_deref(),
        instance.seed,
    )?;
    write_json(&args.out, &report)?;
    // the tightest tolerance in the grid decides the headline verdict
    let min_delta = delta_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let status = report.status_at(min_delta);
    println!(
        "ex-post audit at gamma={}: {:?} (delta* = {:.5})",
        args.gamma, status, report.delta_star
    );
    Ok(match status {
        CertStatus::Certified => EXIT_OK,
        CertStatus::Refuted => EXIT_REFUTED,
        CertStatus::Inconclusive => EXIT_INCONCLUSIVE,
    })
}

fn cmd_dwl_scan(args: DwlScanArgs, seed_override: Option<u64>) -> Result<u8, Error> {
    let kind = parse_kind(&args.mech)?;
    let spec = ScanSpec {
        samples: args.samples,
        max_report: args.max_report,
        witness_eps: args.witness_eps,
    };
    if args.m != 1 {
        return Err(Error::Config("dwl-scan currently scans the single-good setting (m=1)".into()));
    }
    let cost: CostFunction<Real> = CostFunction::ZeroOneSingleGood;
    let report = dwl_sup_scan(kind, args.n, args.m, &cost, &spec, seed_override.unwrap_or(0))?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    println!(
        "sup DWL estimate for {} at n={}: {:.9} over {} profiles",
        report.mechanism, report.n, report.sup_estimate, report.profiles_scanned
    );
    Ok(EXIT_OK)
}

fn cmd_regularity(args: RegularityArgs, seed_override: Option<u64>) -> Result<u8, Error> {
    let kind = parse_kind(&args.mech)?;
    let axioms: Vec<Axiom> = if args.axioms == "all" {
        Axiom::ALL.to_vec()
    } else {
        args.axioms
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()?
    };
    let cfg = ProbeConfig::<Real>::single_good(args.n);
    let seed = seed_override.unwrap_or(0);
    let mut reports = Vec::new();
    let mut failures = 0usize;
    for axiom in axioms {
        let report = regularity_probe(kind, axiom, args.trials, &cfg, seed)?;
        println!(
            "{} {}: {}",
            report.mechanism,
            report.axiom,
            if report.passed() { "pass" } else { "counterexample" }
        );
        if !report.passed() {
            failures += 1;
        }
        reports.push(report);
    }
    if let Some(out) = &args.out {
        write_json(out, &reports)?;
    }
    Ok(if failures == 0 { EXIT_OK } else { EXIT_REFUTED })
}

fn cmd_lb_instance(args: LbArgs, seed_override: Option<u64>) -> Result<u8, Error> {
    let variant = match args.variant.as_str() {
        "main_text" | "main-text" => LowerBoundVariant::MainText,
        "appendix_f" | "appendix-f" => LowerBoundVariant::AppendixF,
        other => return Err(Error::Config(format!("unknown lower-bound variant {other:?}"))),
    };
    let spec = LowerBoundSpec {
        n: args.n,
        eps: args.eps,
        alpha_prime: args.alpha_prime,
        variant,
        horizon: args.t,
        seed: seed_override.unwrap_or(0),
    };
    let instance = make_lower_bound(&spec)?;
    fs::write(&args.out, instance.to_json()?)?;
    println!("wrote {} ({} agents, T={})", args.out.display(), instance.n, instance.horizon);
    Ok(EXIT_OK)
}

fn cmd_deviation_test(args: DeviationArgs, seed_override: Option<u64>) -> Result<u8, Error> {
    let instance = load_instance(&args.instance, seed_override)?;
    let kind = parse_kind(&args.mech)?;
    let profile = load_profile(&args.beta)?;
    if args.agent >= instance.n {
        return Err(Error::Config(format!("agent {} out of range", args.agent)));
    }
    let alt = if args.alt == "truthful" {
        Strategy::Truthful
    } else if let Some(factor) = args.alt.strip_prefix("scale:") {
        let factor: f64 = factor
            .parse()
            .map_err(|e| Error::Config(format!("bad scale factor {factor:?}: {e}")))?;
        Strategy::value_scaling(profile.beta[args.agent] * factor)
    } else {
        return Err(Error::Config(format!(
            "unknown deviation {:?} (use \"truthful\" or \"scale:<factor>\")",
            args.alt
        )));
    };
    let horizon = args.t.unwrap_or(instance.horizon);
    let est = deviation_gain(
        &instance,
        kind,
        &profile.beta,
        args.agent,
        &alt,
        args.reps,
        horizon,
        instance.seed,
    )?;
    let summary = serde_json::json!({
        "agent": args.agent,
        "alt": args.alt,
        "replications": est.replications,
        "mean_gain_per_round": est.mean_gain_per_round,
        "ci99_half_width": est.ci99_half_width,
        "upper99": est.upper99(),
    });
    if let Some(out) = &args.out {
        write_json(out, &summary)?;
    }
    println!(
        "deviation gain per round: {:.6} +/- {:.6} (99% CI)",
        est.mean_gain_per_round, est.ci99_half_width
    );
    Ok(EXIT_OK)
}
