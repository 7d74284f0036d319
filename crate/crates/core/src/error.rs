use thiserror::Error;

use crate::samplers::ExitRecord;

/// Errors raised by the analytic and Monte Carlo routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("kernel singularity: {0}")]
    Singularity(String),

    /// Quadrature or extrapolation did not reach the requested tolerance.
    /// The best estimate is kept so callers can still report it.
    #[error("accuracy not reached: estimate {estimate:e}, achieved {achieved:e}, requested {requested:e} ({context})")]
    Accuracy {
        estimate: f64,
        achieved: f64,
        requested: f64,
        context: String,
    },

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("step budget of {budget} exhausted")]
    Budget { budget: usize, partial: Box<ExitRecord> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
