use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Failures raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Model parameters that cannot define a geometry.
    InvalidGeometry(String),
    /// The form `ω_ref + i∂∂̄φ` is not positive at the given node.
    Inadmissible { node: usize, ratio: f64 },
    /// Data defined for a different model (or resolution) than the one supplied.
    GeometryMismatch { expected: u64, found: u64 },
    /// An iterative solver stopped without meeting its tolerance.
    NonConvergence { what: &'static str, residuals: Vec<f64> },
    /// Adaptive stepping could not keep the potential admissible.
    StepFailure { time: f64, step: f64, reason: String },
    /// Operation not available on this model.
    Unsupported(&'static str),
    InvalidArgument(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidGeometry(s) => write!(f, "invalid geometry: {s}"),
            Error::Inadmissible { node, ratio } => {
                write!(f, "potential inadmissible at node {node} (volume ratio {ratio:e})")
            }
            Error::GeometryMismatch { expected, found } => {
                write!(f, "geometry mismatch: expected {expected:#x}, found {found:#x}")
            }
            Error::NonConvergence { what, residuals } => {
                let last = residuals.last().copied().unwrap_or(f64::NAN);
                write!(f, "{what} did not converge after {} iterations (last residual {last:e})", residuals.len())
            }
            Error::StepFailure { time, step, reason } => {
                write!(f, "step failure at t={time} (h={step:e}): {reason}")
            }
            Error::Unsupported(s) => write!(f, "unsupported: {s}"),
            Error::InvalidArgument(s) => write!(f, "invalid argument: {s}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
