//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the numerical kernels and solvers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("argument error: {0}")]
    Argument(String),

    /// The eigenvalue vector left the admissible Garding cone (or sigma_{n-k}
    /// vanished where a quotient operator needs it).
    #[error("cone violation: {0}")]
    ConeViolation(String),

    /// A gradient reached or exceeded the spacelike bound.
    #[error("spacelike violation: {0}")]
    Spacelike(String),

    /// A field that must be strictly convex is not, at the listed nodes.
    #[error("convexity violation at {count} node(s), first at index {first:?}")]
    Convexity { count: usize, first: Vec<usize> },

    #[error("domain error: {0}")]
    Domain(String),

    /// ODE integration could not proceed (step underflow, slope bound hit).
    #[error("integration failure at r = {r}: {message}")]
    Integration { r: f64, message: String },

    /// Asymptote fit did not converge to the expected model.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    /// Barrier tilt calibration exhausted its search range.
    #[error("calibration failure: {0}")]
    Calibration(String),

    /// A radial profile was queried outside its covered range with tail
    /// extrapolation disabled.
    #[error("profile range exceeded: r = {r} > r_max = {r_max}")]
    ProfileRange { r: f64, r_max: f64 },

    #[error("linear solve failure: {0}")]
    LinearSolve(String),

    #[error("newton: maximum iterations ({0}) exceeded")]
    MaxIterations(usize),

    #[error("newton: line search stagnated (step {0:.3e})")]
    LineSearchStagnation(f64),

    /// Exhaustion plan is inconsistent (empty schedule, watch region not
    /// covered by any stage, level below the subsolution minimum, ...).
    #[error("plan error: {0}")]
    Plan(String),

    #[error("empty domain: {0}")]
    EmptyDomain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
