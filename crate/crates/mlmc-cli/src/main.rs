//! Command-line front end: discretize a kernel ladder, run the multilevel
//! pipeline, spot-check the walk spectrum, or run the verification suites.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mlmc_cli::config::ExperimentConfig;
use mlmc_core::checks::{
    aggregation_interpolation_identities, coarsening_matches_direct_discretization,
    contraction_coefficient_closed_form, contraction_stable_across_levels,
    geometric_total_cost_bound, interpolation_error_linear_in_h, lift_rows_are_stochastic,
    run_all, stationary_perturbation_bound, walk_spectrum_correspondence,
    warm_start_overlap_scaling, warm_start_payoff, worker_count_determinism, CheckOutcome,
};
use mlmc_core::density::DiscreteDensity;
use mlmc_core::io;
use mlmc_core::multilevel::{run_pipeline, total_cost_check};
use mlmc_core::partition::Partition;
use mlmc_core::spectral::{
    check_reversibility, reversibilize, stationary_density, STATIONARY_TOL,
};
use mlmc_core::szegedy::{build_walk, walk_evolve, walk_spectrum_check, WalkSpectrumCheck};
use mlmc_core::ulam::{discretize_kernel, RELATIVE_ENTRY_THRESHOLD};
use mlmc_core::Error;

/// Largest state count the dense walk-operator builder accepts; the walk
/// space is the square of the state space.
const WALK_STATE_CAP: u128 = 64;

#[derive(Parser)]
#[command(
    name = "mlmc",
    version,
    about = "Multilevel mixing-cost toolkit for Markov kernels on [-1,1)^d"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discretize the configured kernel at every scheduled level and dump
    /// the matrices.
    Discretize(RunArgs),
    /// Run the coarse-to-fine pipeline and write the cost reports.
    Pipeline(RunArgs),
    /// Build the walk operator at the finest feasible level and compare its
    /// eigenphases against the discriminant spectrum.
    WalkCheck(WalkCheckArgs),
    /// Run a verification suite and write the aggregate report.
    Verify(VerifyArgs),
    /// Print the effective configuration as a TOML document.
    PrintConfig(PrintConfigArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quadrature seed, overriding the configured one.
    #[arg(long)]
    seed: Option<u64>,
    /// State cap per level, overriding the configured one.
    #[arg(long)]
    cap: Option<u64>,
}

#[derive(Args)]
struct WalkCheckArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of walk applications to trace.
    #[arg(long, default_value_t = 50)]
    steps: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Which suite to run.
    #[arg(value_enum, default_value = "all")]
    suite: Suite,
    /// Output directory for the aggregate report.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PrintConfigArgs {
    /// Configuration file to echo back resolved; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Verification suites, grouped by the claim they exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Lemma1,
    Lemma2,
    Tau,
    Lemma3,
    Walk,
    Theorem1,
    All,
}

/// Failure classes mapped onto exit codes: configuration problems exit 2,
/// capacity overruns 3, failed bound checks 4, anything else 1.
enum Failure {
    Config(String),
    Capacity(String),
    Bound(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Capacity(_) => 3,
            Failure::Bound(_) => 4,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m)
            | Failure::Capacity(m)
            | Failure::Bound(m)
            | Failure::Runtime(m) => m,
        }
    }
}

fn config_phase(e: Error) -> Failure {
    match e {
        Error::Capacity { .. } => Failure::Capacity(e.to_string()),
        _ => Failure::Config(e.to_string()),
    }
}

fn run_phase(e: Error) -> Failure {
    match e {
        Error::Capacity { .. } => Failure::Capacity(e.to_string()),
        _ => Failure::Runtime(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(f) = init_worker_pool().and_then(|()| dispatch(&cli.command)) {
        eprintln!("error: {}", f.message());
        return ExitCode::from(f.code());
    }
    ExitCode::SUCCESS
}

/// Sizes the global worker pool from MLMC_THREADS before any parallel work;
/// the thread count never changes results, only wall time.
fn init_worker_pool() -> Result<(), Failure> {
    let Some(raw) = std::env::var_os("MLMC_THREADS") else {
        return Ok(());
    };
    let threads = raw
        .to_str()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&k| k > 0)
        .ok_or_else(|| {
            Failure::Config(format!("MLMC_THREADS: expected a positive integer, got {raw:?}"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Config(format!("MLMC_THREADS: {e}")))
}

fn dispatch(command: &Command) -> Result<(), Failure> {
    match command {
        Command::Discretize(args) => cmd_discretize(args),
        Command::Pipeline(args) => cmd_pipeline(args),
        Command::WalkCheck(args) => cmd_walk_check(args),
        Command::Verify(args) => cmd_verify(args),
        Command::PrintConfig(args) => cmd_print_config(args),
    }
}

/// Loads the configuration, applies command-line overrides, and validates
/// capacity; everything here counts as the configuration phase.
fn load(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(config_phase)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(cap) = args.cap {
        cfg.caps.states = cap;
    }
    if args.seed.is_some() {
        cfg = cfg.resolved().map_err(config_phase)?;
        cfg.quadrature.as_mut().unwrap().seed = args.seed.unwrap();
    }
    cfg.validate().map_err(config_phase)?;
    cfg.check_capacity().map_err(config_phase)?;
    Ok(cfg)
}

fn cmd_discretize(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load(args)?;
    let d = cfg.schedule.dimension().map_err(config_phase)?;
    let kernel = cfg.build_kernel().map_err(config_phase)?;
    let quad = cfg.quad_spec().map_err(config_phase)?;
    for n in cfg.schedule.resolutions().map_err(config_phase)? {
        let part = Partition::with_cap(n, d, cfg.caps.states).map_err(run_phase)?;
        let p = discretize_kernel(&kernel, &part, &quad).map_err(run_phase)?;
        let (csv, json) = io::write_matrix(
            &cfg.output_dir,
            &format!("matrix_h_1_over_{n}"),
            &p,
            Some(&quad),
            RELATIVE_ENTRY_THRESHOLD,
        )
        .map_err(run_phase)?;
        println!(
            "level h=1/{n}: {} states, wrote {} and {}",
            p.n(),
            csv.display(),
            json.display()
        );
    }
    Ok(())
}

fn cmd_pipeline(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load(args)?;
    let kernel = cfg.build_kernel().map_err(config_phase)?;
    let quad = cfg.quad_spec().map_err(config_phase)?;
    let schedule = cfg.schedule.schedule().map_err(config_phase)?;
    let report = run_pipeline(&kernel, &schedule, &quad, cfg.mode, cfg.target_epsilon)
        .map_err(run_phase)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    let check = total_cost_check(&report, cfg.slack.cost);
    io::write_json(&cfg.output_dir.join("report.json"), &report).map_err(run_phase)?;
    io::write_pipeline_csv(&cfg.output_dir.join("levels.csv"), &report).map_err(run_phase)?;
    io::write_json(&cfg.output_dir.join("cost_check.json"), &check).map_err(run_phase)?;
    println!(
        "{} levels, C_total {:.6}, gamma_hat {:.6}",
        report.levels.len(),
        report.c_total,
        report.gamma_hat
    );
    match check.bound {
        Some(bound) => println!(
            "geometric bound {:.6}: {}",
            bound,
            if check.pass { "satisfied" } else { "violated" }
        ),
        None => println!("geometric bound: not binding in dimension {}", schedule.dim()),
    }
    println!(
        "wrote report.json, levels.csv, cost_check.json under {}",
        cfg.output_dir.display()
    );
    if !check.pass {
        return Err(Failure::Bound(
            "total cost exceeds the geometric bound; see cost_check.json".into(),
        ));
    }
    Ok(())
}

/// What walk-check writes: the chosen level, whether the chain needed
/// reversibilization, and the spectrum comparison.
#[derive(serde::Serialize)]
struct WalkCheckReport<'a> {
    resolution: u32,
    n_states: usize,
    reversibilized: bool,
    detailed_balance_violation: f64,
    max_norm_drift: f64,
    spectrum: &'a WalkSpectrumCheck,
}

fn cmd_walk_check(args: &WalkCheckArgs) -> Result<(), Failure> {
    let cfg = load(&args.run)?;
    let d = cfg.schedule.dimension().map_err(config_phase)?;
    let kernel = cfg.build_kernel().map_err(config_phase)?;
    let quad = cfg.quad_spec().map_err(config_phase)?;
    let resolutions = cfg.schedule.resolutions().map_err(config_phase)?;
    let states = |n: u32| (2 * n as u128).checked_pow(d).unwrap_or(u128::MAX);
    let n = resolutions
        .iter()
        .rev()
        .copied()
        .find(|&n| states(n) <= WALK_STATE_CAP)
        .ok_or_else(|| {
            Failure::Capacity(format!(
                "every scheduled level exceeds the {WALK_STATE_CAP}-state dense \
                 walk cap; coarsen schedule.h_max"
            ))
        })?;

    let part = Partition::with_cap(n, d, cfg.caps.states).map_err(run_phase)?;
    let p = discretize_kernel(&kernel, &part, &quad).map_err(run_phase)?;
    let pi = stationary_density(&p, STATIONARY_TOL).map_err(run_phase)?;
    let rev = check_reversibility(&p, &pi).map_err(run_phase)?;
    let (chain, reversibilized) = if rev.reversible {
        (p, false)
    } else {
        eprintln!(
            "warning: detailed balance violated by {:.3e}; walking the \
             additive reversibilization",
            rev.max_violation
        );
        (reversibilize(&p).map_err(run_phase)?, true)
    };
    let spectrum = walk_spectrum_check(&chain, &pi).map_err(run_phase)?;
    let walk = build_walk(&chain).map_err(run_phase)?;
    let psi0 = walk
        .encode_density(&DiscreteDensity::uniform(part.clone()))
        .map_err(run_phase)?;
    let trace = walk_evolve(&walk, &psi0, args.steps).map_err(run_phase)?;
    io::write_overlap_trace(&cfg.output_dir.join("overlap_trace.csv"), &trace)
        .map_err(run_phase)?;
    let report = WalkCheckReport {
        resolution: n,
        n_states: chain.n(),
        reversibilized,
        detailed_balance_violation: rev.max_violation,
        max_norm_drift: trace.max_norm_drift,
        spectrum: &spectrum,
    };
    io::write_json(&cfg.output_dir.join("walk_check.json"), &report).map_err(run_phase)?;
    println!(
        "level h=1/{n}: {} states{}",
        chain.n(),
        if reversibilized { " (reversibilized)" } else { "" }
    );
    println!(
        "phase gap {:.6} vs sqrt(2 delta) {:.6}, cos match error {:.3e}",
        spectrum.phase_gap,
        (2.0 * spectrum.delta).sqrt(),
        spectrum.cos_match_error
    );
    println!(
        "wrote walk_check.json and overlap_trace.csv under {}",
        cfg.output_dir.display()
    );
    if !spectrum.pass {
        return Err(Failure::Bound(
            "walk phase gap fell below sqrt(2 delta); see walk_check.json".into(),
        ));
    }
    Ok(())
}

fn suite_outcomes(suite: Suite) -> Vec<CheckOutcome> {
    match suite {
        Suite::Lemma1 => vec![interpolation_error_linear_in_h()],
        Suite::Lemma2 => vec![
            aggregation_interpolation_identities(),
            coarsening_matches_direct_discretization(),
        ],
        Suite::Tau => vec![
            contraction_coefficient_closed_form(),
            contraction_stable_across_levels(),
            stationary_perturbation_bound(),
        ],
        Suite::Lemma3 => vec![lift_rows_are_stochastic(), warm_start_overlap_scaling()],
        Suite::Walk => vec![walk_spectrum_correspondence()],
        Suite::Theorem1 => vec![
            geometric_total_cost_bound(),
            warm_start_payoff(),
            worker_count_determinism(),
        ],
        Suite::All => run_all(),
    }
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), Failure> {
    let outcomes = suite_outcomes(args.suite);
    for o in &outcomes {
        println!(
            "{} {:2} {} ({:.2}s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.seconds,
            o.detail
        );
    }
    let suite_name = args
        .suite
        .to_possible_value()
        .expect("no skipped variants")
        .get_name()
        .to_string();
    let path = args.out.join(format!("verify_{suite_name}.json"));
    io::write_json(&path, &outcomes).map_err(run_phase)?;
    println!("wrote {}", path.display());
    let failures = outcomes.iter().filter(|o| !o.pass).count();
    if failures > 0 {
        return Err(Failure::Bound(format!(
            "{failures} of {} checks failed",
            outcomes.len()
        )));
    }
    Ok(())
}

fn cmd_print_config(args: &PrintConfigArgs) -> Result<(), Failure> {
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(config_phase)?,
        None => ExperimentConfig::default(),
    };
    let text = cfg
        .resolved()
        .and_then(|c| c.to_toml())
        .map_err(config_phase)?;
    print!("{text}");
    Ok(())
}
