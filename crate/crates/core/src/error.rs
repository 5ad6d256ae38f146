use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants map one-to-one onto the failure modes of the individual
/// operations so callers (and the CLI exit-code table) can branch on them.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("activation value {value} outside the open image interval ({lo}, {hi})")]
    Domain { value: f64, lo: f64, hi: f64 },
    #[error("sampler could not draw {0} pairwise distinct inputs")]
    Sampler(usize),
    #[error("parameter count {0} exceeds dense Hessian guard {1}")]
    Size(usize, usize),
    #[error("eigensolver failed to converge")]
    Convergence,
    #[error("invalid embedding plan: {0}")]
    Plan(String),
    #[error("point is not critical: max |grad| = {grad_norm:e} > {tol:e}")]
    NotCritical { grad_norm: f64, tol: f64 },
    #[error("no negative effective curvature (min {0:e})")]
    NoNegativeCurvature(f64),
    #[error("training diverged at iteration {0}")]
    Diverged(usize),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("rank condition not met: {0}")]
    Rank(String),
    #[error("submatrix is singular or ill-conditioned (condition {0:e})")]
    Singular(f64),
    #[error("activation path leaves the image interval: {0}")]
    Image(String),
    #[error("network is not eligible for a monotone path: {0}")]
    Eligibility(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("sign constraints infeasible: {0}")]
    InfeasibleSigns(String),
    #[error("path certificate failed: {0}")]
    PathCertificate(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
