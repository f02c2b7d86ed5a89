//! Batch front end: parse a config, run the analysis, and emit
//! machine-readable results and plot data.
//!
//! Exit codes: 0 success, 1 config error, 2 infeasible, 3 solver failure,
//! 4 verification failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "dissipa",
    about = "Local QSR dissipativity analysis via CPA/quadratic storage synthesis"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "DISSIPA_CONFIG")]
    config: Option<PathBuf>,

    /// Output directory for result and data files.
    #[arg(long, global = true, default_value = ".", env = "DISSIPA_OUT")]
    out: PathBuf,

    /// Verification seed override.
    #[arg(long, global = true, env = "DISSIPA_SEED")]
    seed: Option<u64>,

    /// 0 = quiet, 1 = progress, 2 = solver iterations, 3 = solver details.
    #[arg(long, global = true, default_value_t = 1, env = "DISSIPA_VERBOSITY")]
    verbosity: u8,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "DISSIPA_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analysis and write the result JSON plus the storage surface.
    Analyze,
    /// Re-check an existing result file against the config's model.
    Verify {
        /// Result JSON produced by `analyze` (default: the config's output).
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Write the triangulation tables (vertices and simplices CSV).
    Mesh,
    /// Run `analyze` over the configured division list and tabulate.
    Sweep,
    /// Print a human-readable summary of a result file.
    Report {
        /// Result JSON produced by `analyze`.
        result: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .ok();
    }
    let code = match run(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            err.downcast_ref::<commands::ExitClass>()
                .map(|c| c.code())
                .unwrap_or(1)
        }
    };
    ExitCode::from(code)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Analyze => commands::analyze(cli.require_config()?, &cli.out, cli.seed, cli.verbosity),
        Command::Verify { result } => commands::verify(
            cli.require_config()?,
            &cli.out,
            result.as_deref(),
            cli.seed,
        ),
        Command::Mesh => commands::mesh(cli.require_config()?, &cli.out),
        Command::Sweep => commands::sweep(cli.require_config()?, &cli.out, cli.seed, cli.verbosity),
        Command::Report { result } => commands::report(result),
    }
}

impl Cli {
    fn require_config(&self) -> anyhow::Result<&PathBuf> {
        self.config
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("--config is required for this subcommand"))
    }
}
