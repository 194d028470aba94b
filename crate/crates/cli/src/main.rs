//! `dhym`: command-line front end for the numerical laboratory.
//!
//! Exit status: 0 success, 1 invalid config, flags or input, 2 numerical
//! failure, 3 violated property in `verify`.

// `!(x > 0)` rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod cmd;
mod config;
mod error;
mod output;

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cmd::flow::FlowArgs;
use cmd::functional::FunctionalArgs;
use cmd::geodesic::GeodesicArgs;
use cmd::ops::OpsCommand;
use cmd::regularize::RegularizeArgs;
use cmd::verify::VerifyArgs;
use error::{CliError, Result, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(
    name = "dhym",
    version,
    about = "Flows, geodesics and diagnostics for the deformed Hermitian-Yang-Mills equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pointwise operators on an eigenvalue vector.
    #[command(subcommand)]
    Ops(OpsCommand),
    /// Run the twisted flow from an experiment config.
    Flow(FlowArgs),
    /// Epsilon-geodesics between two potentials and the d_p estimate.
    Geodesic(GeodesicArgs),
    /// J, J0, J_eps, Im Z and class margins of a potential.
    Functional(FunctionalArgs),
    /// Mollify and glue a potential.
    Regularize(RegularizeArgs),
    /// Run the property suites and report measured constants.
    Verify(VerifyArgs),
}

fn dispatch(command: &Command) -> Result<String> {
    match command {
        Command::Ops(c) => cmd::ops::run(c),
        Command::Flow(a) => cmd::flow::run(a),
        Command::Geodesic(a) => cmd::geodesic::run(a),
        Command::Functional(a) => cmd::functional::run(a),
        Command::Regularize(a) => cmd::regularize::run(a),
        Command::Verify(a) => {
            let (json, report) = cmd::verify::run(a)?;
            print!("{json}");
            if report.passed {
                Ok(String::new())
            } else {
                Err(CliError::Suite { failed: report.violations, total: report.checks })
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli.command) {
        Ok(text) => {
            print!("{text}");
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
