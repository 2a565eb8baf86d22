//! `centroidal` command-line driver.
//!
//! Exit codes: 0 converged (or valid), 1 usage, I/O or parse error,
//! 2 not converged, 3 infeasible. Log verbosity follows `RUST_LOG`
//! (default `warn`).

mod output;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use centroidal::{
    load_scenario, refine, RefineStatus, RefinementSettings, RelaxationMode, Scenario, TimeMode,
};

#[derive(Parser)]
#[command(name = "centroidal", version, about = "Centroidal momentum trajectory optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a scenario and write trajectory, controls, activations and report.
    Optimize(OptimizeArgs),
    /// Print problem-size and constraint-violation tables for one or more run directories.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
    /// Parse a scenario file and check its invariants.
    Validate { scenario: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum TimeArg {
    Fixed,
    Free,
    FixedHorizon,
}

#[derive(Clone, Copy, ValueEnum)]
enum RelaxArg {
    Trust,
    Soft,
}

#[derive(clap::Args)]
struct OptimizeArgs {
    scenario: PathBuf,
    /// Overrides the scenario's time mode.
    #[arg(long, value_enum)]
    time_mode: Option<TimeArg>,
    /// Overrides the scenario's relaxation mode.
    #[arg(long, value_enum)]
    relaxation: Option<RelaxArg>,
    /// Initial trust-region width [default: the scenario's costs.trust_sigma0].
    #[arg(long)]
    sigma0: Option<f64>,
    /// Trust-region shrink factor per accepted iteration [default: 0.5].
    #[arg(long)]
    sigma_shrink: Option<f64>,
    /// Initial soft-penalty weight [default: the scenario's costs.soft_penalty_w0].
    #[arg(long)]
    w0: Option<f64>,
    /// Outer iterations including the convex-only solve [default: 20].
    #[arg(long)]
    max_outer: Option<usize>,
    /// Interior-point tolerance [default: 1e-7].
    #[arg(long)]
    tol: Option<f64>,
    /// Recorded in the report. The optimization itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write every cone program solved to this directory.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap's own usage-error code (2) would read as "not converged".
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Optimize(args) => optimize(&args),
        Command::Report { run_dirs } => report::print(&run_dirs).map(|()| 0),
        Command::Validate { scenario } => validate(&scenario),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_scenario(&text).with_context(|| format!("parsing {}", path.display()))
}

fn validate(path: &Path) -> Result<u8> {
    let sc = read_scenario(path)?;
    sc.validate().with_context(|| format!("validating {}", path.display()))?;
    println!(
        "{}: {} end-effectors, {} contact phases, {} timesteps",
        sc.config.name,
        sc.plan.eef_ids.len(),
        sc.plan.phases.len(),
        sc.config.n_timesteps
    );
    Ok(0)
}

fn optimize(args: &OptimizeArgs) -> Result<u8> {
    let mut sc = read_scenario(&args.scenario)?;
    if let Some(t) = args.time_mode {
        sc.config.time_mode = match t {
            TimeArg::Fixed => TimeMode::FixedTime,
            TimeArg::Free => TimeMode::TimeOptFreeHorizon,
            TimeArg::FixedHorizon => TimeMode::TimeOptFixedHorizon,
        };
    }
    if let Some(r) = args.relaxation {
        sc.config.relaxation_mode = match r {
            RelaxArg::Trust => RelaxationMode::TrustRegion,
            RelaxArg::Soft => RelaxationMode::SoftConstraint,
        };
    }
    let mut settings = RefinementSettings::for_scenario(&sc);
    if let Some(v) = args.sigma0 {
        settings.sigma0 = v;
    }
    if let Some(v) = args.sigma_shrink {
        settings.sigma_shrink = v;
    }
    if let Some(v) = args.w0 {
        settings.w0 = v;
    }
    if let Some(v) = args.max_outer {
        settings.max_outer = v;
    }
    if let Some(v) = args.tol {
        settings.solver_tol = v;
    }
    settings.dump_dir = args.dump_dir.clone();

    info!("optimizing {} with seed {}", sc.config.name, args.seed);
    let outcome = refine(&sc, &settings)?;
    let run = output::write_run(&args.out, &args.scenario, &sc, &settings, args.seed, &outcome)?;

    let v = &outcome.violation;
    println!(
        "{}: {} after {} outer iterations ({:.3} s solving)",
        sc.config.name, outcome.status, outcome.report.outer_iterations, outcome.report.total_solve_time
    );
    if outcome.status != RefineStatus::Infeasible {
        println!(
            "duration {:.4} s (nominal {:.4} s), errors com {:.3e} lin {:.3e} ang {:.3e}",
            run.total_duration, run.nominal_horizon, v.com_err, v.lin_err, v.ang_err
        );
    }
    if let Some(note) = &outcome.report.note {
        println!("note: {note}");
    }
    println!("wrote {}", args.out.display());
    Ok(match outcome.status {
        RefineStatus::Converged => 0,
        RefineStatus::NotConverged => 2,
        RefineStatus::Infeasible => 3,
    })
}
