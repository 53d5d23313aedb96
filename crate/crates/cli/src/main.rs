use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use curves_cli::checks::{self, Scale};
use curves_cli::{CliError, Mode, RunOptions, SweepConfig};

/// Asymptotic and simulated learning curves of random-feature score models.
///
/// Every flag can also be set through an environment variable with the
/// CURVES_ prefix (CURVES_JOBS, CURVES_OUT, CURVES_MEM_BUDGET); log
/// verbosity follows CURVES_LOG (e.g. CURVES_LOG=debug).
#[derive(Parser)]
#[command(name = "curves", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep config and write CSV plus JSON sidecar.
    Run {
        config: PathBuf,
        /// Worker threads (default: logical cores).
        #[arg(long, env = "CURVES_JOBS")]
        jobs: Option<usize>,
        /// Output CSV (default: the config's `out`, else <config stem>.csv).
        #[arg(long, env = "CURVES_OUT")]
        out: Option<PathBuf>,
        /// Memory budget for simulations, in GiB.
        #[arg(long, env = "CURVES_MEM_BUDGET", default_value_t = 8.0)]
        mem_budget: f64,
    },
    /// Run the cross-module check suite and print a pass/fail table.
    Check {
        /// Reduced problem sizes.
        #[arg(long)]
        quick: bool,
        #[arg(long, env = "CURVES_JOBS")]
        jobs: Option<usize>,
    },
    /// Print the version.
    Version,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn run_checks(scale: Scale, jobs: usize) -> ExitCode {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
        log::warn!("worker pool already initialized: {e}");
    }
    println!("check suite ({} scale)", if scale == Scale::Full { "full" } else { "quick" });
    let outcomes = checks::run_all(scale, |o| {
        println!("{}", o.line());
        for d in &o.details {
            println!("       {d}");
        }
    });
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(config: PathBuf, jobs: usize, out: Option<PathBuf>, mem_budget: f64) -> Result<ExitCode, CliError> {
    let cfg = SweepConfig::from_path(&config)?;
    if cfg.mode == Mode::Check {
        return Ok(run_checks(if cfg.quick { Scale::Quick } else { Scale::Full }, jobs));
    }
    if !(mem_budget > 0.0) {
        return Err(CliError::Invalid("--mem-budget must be > 0".into()));
    }
    let out = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| {
        let stem = config.file_stem().map_or_else(|| "curves".into(), |s| s.to_string_lossy().into_owned());
        PathBuf::from(format!("{stem}.csv"))
    });
    let opts = RunOptions { jobs, out, mem_budget: (mem_budget * (1u64 << 30) as f64) as u64 };
    let summary = curves_cli::run(&cfg, &opts)?;
    println!("wrote {} rows to {} ({})", summary.rows, summary.csv_path.display(), summary.json_path.display());
    if summary.errors.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!("{} grid points failed:", summary.errors.len());
    for (row, e) in &summary.errors {
        eprintln!("  row {row}: {e}");
    }
    Ok(ExitCode::from(1))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CURVES_LOG", "warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Version => {
            println!("curves {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
        Command::Check { quick, jobs } => {
            run_checks(if quick { Scale::Quick } else { Scale::Full }, jobs.unwrap_or_else(default_jobs))
        }
        Command::Run { config, jobs, out, mem_budget } => {
            match run(config, jobs.unwrap_or_else(default_jobs), out, mem_budget) {
                Ok(code) => code,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
