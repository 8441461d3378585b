//! Command-line front end: `mspl fit` and `mspl simulate`.
//!
//! Exit status: 0 success, 1 unexpected failure, 2 input or configuration
//! error, 3 fit did not converge, 4 fit is boundary-flagged (an estimate
//! beyond `--beta-max`/`--psi-max` or a standard error beyond `--se-max`).
//! Result documents are written even when the status is 3 or 4.

pub mod config;
pub mod io;
pub mod report;

use std::ffi::OsString;
use std::path::Path;

use clap::{Parser, Subcommand};

pub use config::{DataSpec, FileConfig, Intercept, RunArgs, RunConfig};
pub use io::{load_csv, read_csv};
pub use report::{FitDocument, SimulationDocument};

use crate::error::Error;
use crate::inference::wald_se_at;
use crate::model::{ClusteredDataset, Theta};
use crate::optimize::{fit, FitOptions, Method};
use crate::sim::{run_study, SimulationDesign};
use report::{ConfigEcho, FitReport, TruthReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_BOUNDARY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mspl", version, about = "Mixed-effects logistic regression by ML or MSPL")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model and report estimates, standard errors and diagnostics.
    Fit(RunArgs),
    /// Simulate from the fitted (or configured) model and refit each sample.
    Simulate(RunArgs),
}

/// A finished run: the document text and the exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub document: String,
    pub status: i32,
}

#[derive(Debug)]
pub struct CliError {
    pub status: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Dataset(_) | Error::Argument(_) | Error::Dimension(_) | Error::UnsupportedDimension(_) => EXIT_INPUT,
            _ => EXIT_FAILURE,
        };
        CliError { status, message: e.to_string() }
    }
}

fn serialize<S: serde::Serialize>(doc: &S) -> Result<String, CliError> {
    toml::to_string(doc).map_err(|e| CliError { status: EXIT_FAILURE, message: format!("cannot serialize result: {e}") })
}

pub fn run_fit(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let data: ClusteredDataset<f64> = load_csv(&cfg.data_path, &cfg.spec)?;
    let approx = cfg.approximation(data.q())?;
    let mut options = FitOptions::new(cfg.method, approx);
    options.thresholds = cfg.thresholds;
    let mut result = fit(&data, &options)?;
    result.se = wald_se_at(&data, &result.theta_hat, approx).ok();

    let names = result.theta_hat.parameter_names(data.fixed_names());
    let report = FitReport::new(&result, names);
    let status = if report.boundary_flagged || report.se_flagged {
        EXIT_BOUNDARY
    } else if !report.converged {
        EXIT_NOT_CONVERGED
    } else {
        EXIT_OK
    };
    let doc = FitDocument { config: ConfigEcho::new("fit", cfg, approx.to_string()), fit: report };
    Ok(RunOutput { document: serialize(&doc)?, status })
}

pub fn run_simulate(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let data: ClusteredDataset<f64> = load_csv(&cfg.data_path, &cfg.spec)?;
    let approx = cfg.approximation(data.q())?;
    let (theta_true, source) = match &cfg.theta_true {
        Some(values) => (Theta::from_slice(values, data.p())?, "config"),
        None => {
            let mut options = FitOptions::new(Method::Mspl, approx);
            options.thresholds = cfg.thresholds;
            let truth_fit = fit(&data, &options)?;
            if !truth_fit.converged {
                return Err(CliError {
                    status: EXIT_NOT_CONVERGED,
                    message: "the MSPL fit used as the simulation truth did not converge".into(),
                });
            }
            (truth_fit.theta_hat, "mspl-fit")
        }
    };
    if theta_true.q() != data.q() {
        return Err(Error::Dimension(format!(
            "simulation.theta_true implies q = {} but the data has q = {}",
            theta_true.q(),
            data.q()
        ))
        .into());
    }
    let methods = cfg
        .simulation_methods
        .iter()
        .map(|&m| {
            let mut o = FitOptions::new(m, approx);
            o.thresholds = cfg.thresholds;
            o
        })
        .collect();
    let design = SimulationDesign::new(data, theta_true, cfg.replications, cfg.seed, methods)?;
    let summary = run_study(&design)?;

    let mut echo = ConfigEcho::new("simulate", cfg, approx.to_string());
    echo.seed = Some(cfg.seed);
    echo.replications = Some(cfg.replications);
    echo.methods = Some(cfg.simulation_methods.iter().map(ToString::to_string).collect());
    let truth = TruthReport {
        source: source.into(),
        names: design.theta_true.parameter_names(design.template.fixed_names()),
        values: design.theta_true.to_vector().as_slice().to_vec(),
    };
    let doc = SimulationDocument::new(echo, truth, &summary);
    Ok(RunOutput { document: serialize(&doc)?, status: EXIT_OK })
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError {
            status: EXIT_INPUT,
            message: format!("cannot write {}: {e}", path.display()),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Run a parsed command, writing the document; returns the exit status.
pub fn execute(cli: &Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Fit(args) => RunConfig::resolve(args).map_err(CliError::from).and_then(|cfg| {
            let out = run_fit(&cfg)?;
            write_output(cfg.out.as_deref(), &out.document)?;
            Ok(out.status)
        }),
        Command::Simulate(args) => RunConfig::resolve(args).map_err(CliError::from).and_then(|cfg| {
            let out = run_simulate(&cfg)?;
            write_output(cfg.out.as_deref(), &out.document)?;
            Ok(out.status)
        }),
    };
    match outcome {
        Ok(status) => {
            match status {
                EXIT_BOUNDARY => eprintln!("warning: estimates are boundary-flagged"),
                EXIT_NOT_CONVERGED => eprintln!("warning: the fit did not converge"),
                _ => {}
            }
            status
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.status
        }
    }
}

/// Parse `args` (including the program name) and run.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INPUT
            } else {
                EXIT_OK
            }
        }
    }
}
