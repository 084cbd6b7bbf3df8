use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A decomposition (SVD, eigen, Schur) did not converge.
    #[error("numerical failure in {context}: decomposition did not converge on a {}x{} matrix", .matrix.nrows(), .matrix.ncols())]
    NumericalFailure {
        context: &'static str,
        matrix: DMatrix<f64>,
    },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("matrix is not positive semi-definite: smallest eigenvalue {min_eig:e}")]
    NotPsd { min_eig: f64 },

    /// The GDRE left its admissible set (Ω not PSD or the range condition failed).
    #[error(
        "GDRE breakdown at t = {time}: min eig(R + D'PD) = {min_eig:e}, regularity defect = {reg_defect:e}"
    )]
    GdreBreakdown {
        time: f64,
        min_eig: f64,
        reg_defect: f64,
    },

    #[error(
        "SDRE breakdown at t = {time}: min eig(R_P + D'ZD) = {min_eig:e}, regularity defect = {reg_defect:e}, min eig(Z) = {z_min_eig:e}"
    )]
    SdreBreakdown {
        time: f64,
        min_eig: f64,
        reg_defect: f64,
        z_min_eig: f64,
    },

    #[error("no convergence within horizon {horizon}: last window difference {last_diff:e}")]
    NonConvergence { horizon: f64, last_diff: f64 },

    /// The supplied stationary matrix does not satisfy the shifted algebraic equation.
    #[error("inconsistent SARE data: {what} = {value:e}")]
    Inconsistency { what: &'static str, value: f64 },

    #[error("closed loop is not mean-square stable (spectral abscissa {spectral_abscissa:e})")]
    Unstable { spectral_abscissa: f64 },

    #[error("simulation diverged at t = {time} (path {path})")]
    Divergence { time: f64, path: usize },
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::ContractViolation(msg.into())
}
