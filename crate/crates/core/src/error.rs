use thiserror::Error;

/// Errors raised by the numerical routines of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    /// Two unsmeared charges sit on top of each other, or a kernel was evaluated at the origin.
    #[error("kernel singularity: {0}")]
    Singularity(String),

    #[error("coincident points {i} and {j}")]
    CoincidentPoints { i: usize, j: usize },

    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative method ran out of iterations.
    #[error("{method} did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{method} diverged: residual grew for {sweeps} consecutive sweeps (last {residual:e})")]
    Divergence {
        method: &'static str,
        sweeps: usize,
        residual: f64,
    },

    /// The equilibrium support reaches the outer margin of the computational box.
    #[error("computational box too small: support reaches {reach:.4} of the half-width")]
    BoxTooSmall { reach: f64 },

    #[error("winding number ill-defined: |u| = {modulus:.3e} on the contour")]
    IllDefinedDegree { modulus: f64 },

    /// The requested combination of parameters and method is not implemented.
    #[error("unsupported: {0}")]
    Capability(String),

    #[error("linear solver breakdown: {0}")]
    LinearSolver(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
