//! `sdde` — batch experiment runner for truncated Euler–Maruyama schemes on
//! stochastic delay differential equations.
//!
//! Four subcommands cover the workflows the library supports: `simulate`
//! writes individual paths, `converge` measures strong error against a fine
//! reference, `stability` measures mean-square decay and pathwise exponents
//! under the damped scheme, and `gamma` solves for the theoretical decay
//! rate. Every run is reproducible from the configuration echoed into its
//! `report.txt`; results never depend on the worker thread count.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 scheme blow-up,
//! 4 i/o failure.

mod args;
mod commands;
mod error;
mod output;

use clap::Parser;

fn main() {
    let cli = args::Cli::parse();
    if let Err(e) = commands::dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
