//! Config-driven experiment drivers for the power-allocation game: Monte
//! Carlo uniqueness statistics, equilibrium spectra, rate regions and the
//! diagonal-precoding check, written as CSV and JSON.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{CliError, Result};
pub use output::{write_report, Report};

use std::path::Path;

/// Runs one experiment kind and writes its outputs. `out` overrides the
/// config's output path; stdout is used when neither is set.
pub fn run(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    workers: Option<usize>,
) -> Result<Report> {
    let report = match kind {
        ExperimentKind::UniquenessMc => experiments::run_uniqueness_mc(cfg, workers)?,
        ExperimentKind::Psd => experiments::run_psd(cfg, workers)?,
        ExperimentKind::RateRegion => experiments::run_rate_region(cfg, workers)?,
        ExperimentKind::VerifyTheorem1 => experiments::run_verify_theorem1(cfg, workers)?,
        ExperimentKind::CheckUniqueness => experiments::run_check_uniqueness(cfg, workers)?,
    };
    write_report(&report, out.or(cfg.output.as_deref()))?;
    match &report.violation {
        Some(msg) => Err(CliError::Violation(msg.clone())),
        None => Ok(report),
    }
}
