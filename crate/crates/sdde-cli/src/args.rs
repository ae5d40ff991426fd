//! Command-line surface of the experiment runner.
//!
//! Every knob that influences a numeric result is an explicit flag with a
//! deterministic default, and the resolved values are echoed into the run
//! report so a run can be reproduced from its own output.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "sdde",
    version,
    about = "Truncated Euler-Maruyama experiments for stochastic delay differential equations"
)]
pub struct Cli {
    /// Directory for CSV output and the run report (created if missing).
    #[arg(long, global = true, env = "SDDE_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    /// Worker thread cap for the Monte Carlo loops. Results are identical
    /// for every thread count; this only trades wall-clock for cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate one or more paths on the fine lattice and write them as CSV.
    Simulate(SimulateArgs),
    /// Coupled strong-error study across a ladder of step sizes.
    Converge(ConvergeArgs),
    /// Mean-square decay and pathwise exponent study for the damped scheme.
    Stability(StabilityArgs),
    /// Solve the decay-rate fixed point and evaluate its constraints.
    Gamma(GammaArgs),
}

/// Time-stepping scheme selector.
#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeArg {
    /// Truncated scheme with a growth-matched radius.
    Tem,
    /// Truncated scheme with the more aggressive damping radius.
    StabTem,
    /// Classical explicit scheme without truncation.
    Em,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Catalog model name (see `--model help` output on error for the list).
    #[arg(long)]
    pub model: String,

    /// Scheme to step with.
    #[arg(long, value_enum, default_value_t = SchemeArg::Tem)]
    pub scheme: SchemeArg,

    /// Steps per delay interval; the step size is delay / n.
    #[arg(long, default_value_t = 128)]
    pub n: u32,

    /// Simulation horizon in time units.
    #[arg(long = "T", default_value_t = 8.0)]
    pub horizon: f64,

    /// Number of independent paths to write (path.csv, or path_<k>.csv).
    #[arg(long, default_value_t = 1)]
    pub paths: u32,

    /// Base seed; path k uses noise stream k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Truncation profile override, e.g. `polynomial:alpha=2,k4=12,q=15,r=3`
    /// or `stability:mu=0.01`. Defaults to the model's recommended profile.
    #[arg(long)]
    pub profile: Option<String>,
}

#[derive(Args, Debug)]
pub struct ConvergeArgs {
    /// Catalog model name.
    #[arg(long)]
    pub model: String,

    /// Moment order of the error statistic. Defaults to the catalog
    /// recommendation for the model (3 for example1, 2 otherwise).
    #[arg(long)]
    pub p: Option<f64>,

    /// Comma-separated coarse step counts per delay, e.g. 64,256,1024.
    #[arg(long = "n-list", value_delimiter = ',', required = true)]
    pub n_list: Vec<u32>,

    /// Steps per delay of the reference solution; every entry of --n-list
    /// must divide it.
    #[arg(long = "ref-n")]
    pub ref_n: u32,

    /// Monte Carlo sample count per step size.
    #[arg(long, default_value_t = 1000)]
    pub samples: u32,

    /// Comparison horizon in time units.
    #[arg(long = "T", default_value_t = 1.0)]
    pub horizon: f64,

    /// Base seed; sample k uses noise stream k on a shared fine lattice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Truncation profile override (see `simulate --help`).
    #[arg(long)]
    pub profile: Option<String>,
}

#[derive(Args, Debug)]
pub struct StabilityArgs {
    /// Catalog model name.
    #[arg(long)]
    pub model: String,

    /// Steps per delay interval.
    #[arg(long, default_value_t = 128)]
    pub n: u32,

    /// Simulation horizon in time units.
    #[arg(long = "T", default_value_t = 8.0)]
    pub horizon: f64,

    /// Sample count for the mean-square decay estimate.
    #[arg(long, default_value_t = 1000)]
    pub samples: u32,

    /// Sample count for the pathwise exponent estimate.
    #[arg(long = "as-samples", default_value_t = 100)]
    pub as_samples: u32,

    /// Rate slack used when reporting the admissible step-size bound.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,

    /// Time window `lo,hi` for the decay-slope fit. Defaults to
    /// `delay,horizon`.
    #[arg(long = "fit-window")]
    pub fit_window: Option<String>,

    /// Base seed; the mean-square and pathwise halves draw from disjoint
    /// derived streams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Truncation profile override (see `simulate --help`).
    #[arg(long)]
    pub profile: Option<String>,
}

#[derive(Args, Debug)]
pub struct GammaArgs {
    /// Strict upper bound for the drift-side constraint.
    #[arg(long)]
    pub k6bar: f64,

    /// Drift-side constant (must sit below --k6bar).
    #[arg(long)]
    pub k6: f64,

    /// Strict upper bound for the noise-side constraint.
    #[arg(long)]
    pub k7bar: f64,

    /// Noise-side constant (must sit below --k7bar).
    #[arg(long)]
    pub k7: f64,

    /// Delay length entering both constraints.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,

    /// Optional candidate rate; when given, both constraint left-hand sides
    /// are also evaluated at this value.
    #[arg(long)]
    pub gamma: Option<f64>,

    /// Rate slack for the optional step-size bound (requires --k-hat and --mu).
    #[arg(long)]
    pub epsilon: Option<f64>,

    /// Truncation-profile constant for the optional step-size bound.
    #[arg(long = "k-hat")]
    pub k_hat: Option<f64>,

    /// Truncation-profile exponent for the optional step-size bound.
    #[arg(long)]
    pub mu: Option<f64>,
}
