mod commands;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Parser, Debug)]
#[command(name = "pontryagin", version, about = "Finite-horizon multipliers and maximum-principle checks for discrete-time control problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Builtin instance name or path to a TOML problem file.
    #[arg(long, global = true, default_value = "lq-stable")]
    pub instance: String,

    /// Truncation horizon for `multipliers`, `verify` and `bound-cert`.
    #[arg(long, global = true, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..=200))]
    pub h: u64,

    /// Largest horizon of a sweep.
    #[arg(long, global = true, default_value_t = 20, value_parser = clap::value_parser!(u64).range(3..=200))]
    pub h_max: u64,

    /// Number of tracked costates in a sweep (at most h_max − 1).
    #[arg(long, global = true, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..=199))]
    pub t_max: u64,

    /// Depth of the verification (defaults to the multiplier horizon).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..=200))]
    pub t_check: Option<u64>,

    /// Largest stage examined by `check`, and the comparison window of `compare`.
    #[arg(long, global = true, default_value_t = 50, value_parser = clap::value_parser!(u64).range(2..=200))]
    pub horizon_cap: u64,

    #[arg(long, global = true, default_value_t = 1e-8)]
    pub tol_adjoint: f64,

    #[arg(long, global = true, default_value_t = 1e-8)]
    pub tol_vi: f64,

    /// Relative singular-value cut-off for numerical rank.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub rank_tol: f64,

    /// Report file; standard output when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Seed for every randomized sample check.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    /// Number of random samples for `bound-cert` and sweep diagnostics.
    #[arg(long, global = true, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..=100_000))]
    pub samples: u64,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Check the standing hypotheses and range conditions along the reference.
    Check,
    /// Compute and verify multipliers of the truncated problem at `--h`.
    Multipliers,
    /// Normalized multipliers for h = 2..=h_max and their convergence.
    Sweep,
    /// Check the maximum-principle conditions for given or computed multipliers.
    Verify {
        /// JSON file with `lambda0` and `p` (p_1, p_2, …); computed at `--h` when omitted.
        #[arg(long)]
        multipliers: Option<PathBuf>,
    },
    /// Sampled preimage-bound certificate for the constraint derivative at `--h`.
    BoundCert,
    /// Compare the reference against a challenger process.
    Compare {
        /// JSON file with `controls` (u_0, u_1, …) driven from the same initial state.
        #[arg(long, conflicts_with = "perturb")]
        challenger: Option<PathBuf>,
        /// Shift the first coordinate of u_0 by this amount (default challenger).
        #[arg(long, allow_hyphen_values = true)]
        perturb: Option<f64>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PONTRYAGIN_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(pass) => ExitCode::from(if pass { 0 } else { 1 }),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
