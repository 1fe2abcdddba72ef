//! Batch front end: radial profiles, Dirichlet solves, exhaustion runs and
//! verification bundles, driven by JSON configs.
//!
//! Exit codes: 0 success, 2 config/schema violation, 3 numerical failure
//! (with a diagnostic JSON in the output directory), 4 I/O failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mincurv::error::Error;

#[derive(Parser)]
#[command(
    name = "mincurv",
    about = "Spacelike prescribed-curvature hypersurfaces and translating \
             solitons in Minkowski space: batch solver front end."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a radial profile and extract its asymptotic constants.
    Radial(RunArgs),
    /// Solve one Dirichlet problem (primal or dual form).
    Dirichlet(RunArgs),
    /// Exhaustion run approximating an entire solution.
    Entire(RunArgs),
    /// Translating-soliton pipeline (alias for an entire run in soliton mode).
    Soliton(RunArgs),
    /// Run the applicable verification checks on a previous run's artifacts.
    Verify(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Suppress progress lines on stderr.
    #[arg(long, default_value_t = false)]
    quiet: bool,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Schema(_) | Error::Argument(_) | Error::Plan(_) => 2,
        Error::Io(_) | Error::Json(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Radial(a) => ("radial", a),
        Command::Dirichlet(a) => ("dirichlet", a),
        Command::Entire(a) => ("entire", a),
        Command::Soliton(a) => ("soliton", a),
        Command::Verify(a) => ("verify", a),
    };
    let result = commands::run(name, &args.config, &args.out, args.quiet);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("mincurv {name}: {err}");
            let code = exit_code_for(&err);
            if code == 3 {
                // diagnostic JSON for numerical failures
                let diag = serde_json::json!({
                    "command": name,
                    "error": err.to_string(),
                });
                let _ = std::fs::create_dir_all(&args.out);
                let _ = std::fs::write(
                    args.out.join("failure.json"),
                    serde_json::to_string_pretty(&diag).unwrap_or_default(),
                );
            }
            ExitCode::from(code)
        }
    }
}
