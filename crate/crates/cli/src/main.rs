use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use morphic_cli::campaign::{self, RunSummary};
use morphic_cli::config::{load_config, resolve, Mode, Overrides};
use morphic_cli::replay::replay;
use morphic_cli::report::{compare, report, write_comparison};

/// Adaptive metamorphic testing campaigns over image SUTs.
#[derive(Debug, Parser)]
#[command(name = "morphic", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a campaign. The mode must match the config's `mode` field.
    Run {
        #[arg(value_enum)]
        mode: Mode,
        /// Campaign config (JSON). Relative paths inside it resolve
        /// against its directory.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's iteration count.
        #[arg(long)]
        iterations: Option<u64>,
        /// Resume from this snapshot instead of a fresh bandit state.
        #[arg(long)]
        snapshot_in: Option<PathBuf>,
        /// Write the end-of-run snapshot here.
        #[arg(long)]
        snapshot_out: Option<PathBuf>,
        /// Directory for artifacts (default: the config's directory).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Summarise one or more campaign logs into CSV/JSON tables.
    Report {
        /// Campaign log; repeat for side-by-side tables. Log names are
        /// the file stems and must be distinct.
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        /// Baseline table to include in the rate comparison.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare an adaptive log against a random one by final violation
    /// rate.
    Compare {
        #[arg(long)]
        amt: PathBuf,
        #[arg(long)]
        random: PathBuf,
        /// Also write the comparison JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun a campaign from its config and byte-compare the artifact.
    /// Exits 0 when identical, 1 when not.
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<u64>,
        /// Reference log (loop modes).
        #[arg(long, conflicts_with = "table")]
        log: Option<PathBuf>,
        /// Reference table (baseline mode).
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn fail(message: impl std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("morphic: {message}");
    ExitCode::from(code)
}

fn print_run_summary(summary: &RunSummary) {
    let artifact = summary
        .table_path
        .as_deref()
        .or(summary.log_path.as_deref())
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    let snapshot = summary
        .snapshot_path
        .as_deref()
        .map(|p| format!(", snapshot {}", p.display()))
        .unwrap_or_default();
    println!(
        "[{}] {} iterations, {} scored, {} violations (rate {:.4}), {} failed, \
         {:.3} ms/iter overhead -> {}{}",
        summary.mode,
        summary.iterations,
        summary.scored,
        summary.violations,
        summary.violation_rate,
        summary.failed,
        summary.meta.overhead_ms_per_iteration,
        artifact,
        snapshot
    );
}

fn run_command(command: Command) -> ExitCode {
    match command {
        Command::Run {
            mode,
            config,
            seed,
            iterations,
            snapshot_in,
            snapshot_out,
            out_dir,
        } => {
            let parsed = match load_config(&config) {
                Ok(parsed) => parsed,
                Err(e) => return fail(e, EXIT_USAGE),
            };
            let overrides = Overrides {
                seed,
                iterations,
                snapshot_in,
                snapshot_out,
                out_dir,
            };
            let resolved = match resolve(&parsed, &config, &overrides) {
                Ok(resolved) => resolved,
                Err(e) => return fail(e, EXIT_USAGE),
            };
            if resolved.mode != mode {
                return fail(
                    format!(
                        "config {} runs {}, but the subcommand says {}",
                        config.display(),
                        resolved.mode,
                        mode
                    ),
                    EXIT_USAGE,
                );
            }
            match campaign::run(&resolved) {
                Ok(summary) => {
                    print_run_summary(&summary);
                    ExitCode::SUCCESS
                }
                Err(e) if e.is_usage() => fail(e, EXIT_USAGE),
                Err(e) => fail(e, EXIT_RUNTIME),
            }
        }
        Command::Report {
            logs,
            baseline,
            out_dir,
        } => match report(&logs, baseline.as_deref(), &out_dir) {
            Ok(paths) => {
                for path in paths.all() {
                    println!("wrote {}", path.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) if e.is_usage() => fail(e, EXIT_USAGE),
            Err(e) => fail(e, EXIT_RUNTIME),
        },
        Command::Compare { amt, random, out } => match compare(&amt, &random) {
            Ok(comparison) => {
                if let Some(out) = out {
                    let file = match std::fs::File::create(&out) {
                        Ok(file) => file,
                        Err(e) => return fail(format!("{}: {e}", out.display()), EXIT_RUNTIME),
                    };
                    if let Err(e) = write_comparison(&comparison, file) {
                        return fail(format!("{}: {e}", out.display()), EXIT_RUNTIME);
                    }
                }
                write_comparison(&comparison, std::io::stdout().lock())
                    .expect("stdout writable");
                ExitCode::SUCCESS
            }
            Err(e) if e.is_usage() => fail(e, EXIT_USAGE),
            Err(e) => fail(e, EXIT_RUNTIME),
        },
        Command::Replay {
            config,
            seed,
            iterations,
            log,
            table,
        } => {
            let (reference, is_table) = match (log, table) {
                (Some(log), None) => (log, false),
                (None, Some(table)) => (table, true),
                _ => return fail("replay needs exactly one of --log or --table", EXIT_USAGE),
            };
            match replay(&config, seed, iterations, &reference, is_table) {
                Ok(outcome) => {
                    println!("{}", outcome.message);
                    if outcome.identical {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_RUNTIME)
                    }
                }
                Err(e) if e.is_usage() => fail(e, EXIT_USAGE),
                Err(e) => fail(e, EXIT_RUNTIME),
            }
        }
    }
}

fn main() -> ExitCode {
    run_command(Cli::parse().command)
}
