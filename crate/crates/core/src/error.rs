use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("Kepler solver failed to converge for ell={ell}, e={e}")]
    KeplerNoConvergence { ell: f64, e: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("collision with a primary (r1={r1:.3e}, r2={r2:.3e})")]
    Singularity { r1: f64, r2: f64 },

    #[error("integrator step size underflow at t={t}")]
    StepUnderflow { t: f64 },

    #[error("integrator exceeded the step budget at t={t}")]
    MaxSteps { t: f64 },

    #[error("differential correction failed: {0}")]
    CorrectionFailure(String),

    #[error("continuation stalled: {0}")]
    ContinuationStall(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
