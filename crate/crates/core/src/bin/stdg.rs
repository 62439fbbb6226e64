//! Batch driver for the space-time Galerkin Maxwell solver.

use clap::Parser;
use stdg::cli::{run_experiment, CliArgs};

fn main() {
    let args = CliArgs::parse();
    match run_experiment(&args) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(2);
        }
    }
}
