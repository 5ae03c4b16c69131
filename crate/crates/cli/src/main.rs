//! `credo`: autocode a controller model into an annotated program, check its
//! verification conditions, and simulate the closed loop.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "credo", version, about = "Credible autocoding of controller models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Model file (TOML).
    model: PathBuf,
    /// Output directory.
    #[arg(long, env = "CREDO_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Binding override `key=value`, e.g. `dt=0.02` or `car.Iw=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Emit the annotated program and the verification-condition file.
    Autocode {
        #[command(flatten)]
        common: Common,
    },
    /// Autocode, then verify every VC from the written VC file.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Bisection depth per dimension.
        #[arg(long, default_value_t = 12)]
        depth: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Simulate the closed loop and monitor the loop invariants.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Step size; overrides the model's `dt`.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        /// Initial tracking error, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        xtilde0: Option<Vec<f64>>,
        /// Initial manifold offset `omega - phi`, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z0: Option<Vec<f64>>,
        /// Rescale the initial tracking error to this Lyapunov level.
        #[arg(long)]
        xtilde_level: Option<f64>,
        /// Draw unspecified initial values uniformly from the invariant sets.
        #[arg(long)]
        random: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Monitor tolerance above level 1.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Print the LQR gain, Riccati and Lyapunov matrices and closed-loop spectrum.
    Lqr {
        #[command(flatten)]
        common: Common,
    },
}

/// Outcome of a subcommand that ran to completion: `true` if everything
/// checked out.
pub type Outcome = Result<bool, commands::Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Autocode { common } => commands::autocode(&common),
        Command::Check {
            common,
            samples,
            depth,
            seed,
        } => commands::check(&common, samples, depth, seed),
        Command::Simulate {
            common,
            dt,
            steps,
            xtilde0,
            z0,
            xtilde_level,
            random,
            seed,
            tol,
        } => commands::simulate(
            &common,
            &commands::SimulateOptions {
                dt,
                steps,
                xtilde0,
                z0,
                xtilde_level,
                random,
                seed,
                tol,
            },
        ),
        Command::Lqr { common } => commands::lqr(&common),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
