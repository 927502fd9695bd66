//! File formats, dataset plumbing and the command implementations behind
//! the `irstd` binary.

pub mod atomic;
pub mod checkpoint;
pub mod commands;
pub mod dataset;
pub mod manifest;
pub mod pgm;
pub mod report;
pub mod svgplot;

use std::process::ExitCode;

/// Exit discipline: 0 success, 1 argument/validation error, 2 runtime
/// failure.
pub enum RunError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl RunError {
    pub fn report(self) -> ExitCode {
        match self {
            RunError::Validation(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
            RunError::Runtime(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        }
    }
}

/// Core errors split by kind: contract violations are validation errors,
/// numerical trouble is a runtime failure.
pub fn classify(err: irstd_core::Error) -> RunError {
    match &err {
        irstd_core::Error::Numerical(_) => RunError::Runtime(anyhow::anyhow!("{err}")),
        _ => RunError::Validation(anyhow::anyhow!("{err}")),
    }
}

pub fn io_error(context: &str, err: std::io::Error) -> RunError {
    RunError::Runtime(anyhow::anyhow!("{context}: {err}"))
}

pub type RunResult<T> = Result<T, RunError>;
