use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsct_cli::commands;
use dsct_cli::failure::{CliResult, Failure};
use dsct_cli::files::write_atomic;
use dsct_cli::LoadedConfig;

#[derive(Parser)]
#[command(name = "dsct", version, about = "Dual-spectral CT simulation and material decomposition")]
struct Cli {
    /// Worker threads; falls back to DSCT_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set solver.iterations=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory, replacing `output.dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate both sinograms and the ground-truth images.
    Simulate(RunArgs),
    /// Decompose simulated sinograms into basis images.
    Decompose {
        #[command(flatten)]
        run: RunArgs,
        /// Directory holding the sinograms; defaults to the output directory.
        #[arg(long)]
        scan: Option<PathBuf>,
    },
    /// RMSE and ROI statistics of images against ground truth.
    Metrics {
        #[arg(long = "image", required = true)]
        images: Vec<PathBuf>,
        #[arg(long = "truth")]
        truths: Vec<PathBuf>,
        #[arg(long)]
        rois: Option<PathBuf>,
        /// Report file; printed to stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn load(run: &RunArgs) -> CliResult<LoadedConfig> {
    let mut cfg = LoadedConfig::load(&run.config, &run.overrides)?;
    if let Some(out) = &run.out {
        cfg.config.output.dir = std::path::absolute(out)
            .map_err(|e| Failure::config("config", format!("{}: {e}", out.display())))?;
    }
    Ok(cfg)
}

fn init_threads(flag: Option<usize>) -> CliResult<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("DSCT_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| {
                Failure::config("config", format!("DSCT_THREADS={v:?} is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Failure::config("config", "thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config("config", e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Simulate(run) => {
            let dir = commands::simulate(&load(&run)?)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Decompose { run, scan } => {
            let dir = commands::decompose(&load(&run)?, scan.as_deref())?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Metrics { images, truths, rois, out } => {
            let report = commands::metrics(&images, &truths, rois.as_deref())?;
            match out {
                Some(path) => write_atomic(&path, report.as_bytes())?,
                None => print!("{report}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("dsct: {f}");
            ExitCode::from(f.code)
        }
    }
}
