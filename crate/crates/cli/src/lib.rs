//! Command-line front end: problem files in, JSON reports and CSV series out.
//!
//! Exit codes:
//!
//! | code | outcome |
//! |------|---------|
//! | 0 | success |
//! | 1 | parse, validation or IO error |
//! | 2 | no member of the LMI set (infeasible) |
//! | 3 | GARE solved but the closed loop is not mean-square stable |
//! | 4 | nonconvergence, Riccati breakdown or numerical failure |
//! | 5 | simulation diverged |

pub mod commands;
pub mod problem;
pub mod report;

pub use commands::GainMode;
pub use problem::{Problem, ProblemFile};
pub use report::Report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        Outcome::Invalid.code()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Invalid,
    Infeasible,
    Unstable,
    Numerical,
    Divergence,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Invalid => 1,
            Outcome::Infeasible => 2,
            Outcome::Unstable => 3,
            Outcome::Numerical => 4,
            Outcome::Divergence => 5,
        }
    }

    pub fn status(self) -> &'static str {
        match self {
            Outcome::Success => "ok",
            Outcome::Invalid => "invalid",
            Outcome::Infeasible => "infeasible",
            Outcome::Unstable => "unstable",
            Outcome::Numerical => "numerical_failure",
            Outcome::Divergence => "divergence",
        }
    }
}

/// Parses an `ILQ_SEED` value.
pub fn parse_seed(raw: &str) -> Result<u64, CliError> {
    raw.trim()
        .parse()
        .map_err(|e| CliError::Invalid(format!("ILQ_SEED: {e} (got {raw:?})")))
}
