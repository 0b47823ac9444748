//! `scenscore` — scoring pipeline for stress-scenario sets.
//!
//! Exit codes: 0 success, 2 validation error, 3 solver non-convergence,
//! 4 data error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use scenscore::error::Error;
use scenscore::portfolios::PnlSign;
use scenscore_cli::commands::{self, RunStatus};
use scenscore_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "scenscore", version, about = "Score stress-scenario sets against the most plausible same-loss scenario")]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true, default_value = "run.toml")]
    config: PathBuf,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for scoring (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override the pillar list, e.g. `--pillars 6M,1Y,2Y,3Y,4Y,5Y`.
    #[arg(long, global = true, value_delimiter = ',')]
    pillars: Option<Vec<String>>,
    /// Fit a single distribution on all risk factors instead of one per
    /// portfolio group.
    #[arg(long, global = true)]
    full_fit: bool,
    /// Bond P&L sign convention.
    #[arg(long, global = true, value_enum)]
    pnl_sign: Option<PnlSignArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PnlSignArg {
    /// P&L = (ΔY)·D as written.
    Paper,
    /// Conventional P&L = −D·ΔY.
    Standard,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest data and fit the meta-t distributions.
    Fit,
    /// Generate the base and enriched PCA scenario sets.
    GenScenarios,
    /// Score the portfolio universe against one scenario set.
    Score {
        /// Scenario CSV to score.
        scenarios: PathBuf,
    },
    /// Compare two scenario sets on the same universe and fits.
    Compare {
        set_a: PathBuf,
        set_b: PathBuf,
    },
    /// Brute-force cross-check of the exact solver.
    Oracle,
}

fn run(cli: &Cli) -> Result<RunStatus, Error> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(out) = &cli.out {
        // Flag paths resolve against the working directory, not the
        // config location.
        cfg.output.dir = if out.is_absolute() {
            out.clone()
        } else {
            std::env::current_dir()
                .map(|d| d.join(out))
                .unwrap_or_else(|_| out.clone())
        };
    }
    if let Some(jobs) = cli.jobs {
        cfg.output.jobs = jobs;
    }
    if let Some(pillars) = &cli.pillars {
        cfg.data.pillars = pillars.clone();
    }
    if cli.full_fit {
        cfg.fit.mode = scenscore::distributions::fit::FitMode::Full;
    }
    if let Some(sign) = cli.pnl_sign {
        cfg.portfolios.pnl_sign = match sign {
            PnlSignArg::Paper => PnlSign::Paper,
            PnlSignArg::Standard => PnlSign::Standard,
        };
    }
    cfg.validate()?;

    if cfg.output.jobs > 0 {
        // Ignore the error when a pool is already installed.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.output.jobs)
            .build_global();
    }

    match &cli.command {
        Command::Fit => commands::cmd_fit(&cfg),
        Command::GenScenarios => commands::cmd_generate(&cfg),
        Command::Score { scenarios } => commands::cmd_score(&cfg, scenarios),
        Command::Compare { set_a, set_b } => commands::cmd_compare(&cfg, set_a, set_b),
        Command::Oracle => commands::cmd_oracle(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(status) => {
            if status.failures > 0 {
                eprintln!("error: {} portfolio(s) failed and were excluded", status.failures);
                ExitCode::from(4)
            } else if status.non_converged > 0 {
                eprintln!("error: {} record(s) did not converge", status.non_converged);
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Validation(_) => 2,
                Error::Solver(_) => 3,
                Error::Data(_) | Error::Io { .. } => 4,
            };
            ExitCode::from(code)
        }
    }
}
