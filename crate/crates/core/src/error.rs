use thiserror::Error;

use crate::nonlinear::GnResult;

pub type Result<T, E = PsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum PsError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("light matrix is rank deficient (numerical rank {rank}, need 3)")]
    RankDeficientLights { rank: usize },

    #[error("too few images: got {got}, need at least {needed}")]
    TooFewImages { got: usize, needed: usize },

    #[error("underdetermined Gram system: {rows} rows, at least six images are required")]
    Underdetermined { rows: usize },

    #[error("degenerate data matrix: all singular values vanish")]
    DegenerateData,

    /// Cholesky of the Gram candidate is impossible; the dataset is not ideal.
    #[error("Cholesky breakdown: smallest eigenvalue of G is {lambda3:e}")]
    Breakdown { lambda3: f64 },

    #[error("unrecoverable breakdown: best candidate eigenvalue {lambda_max:e} is not positive")]
    UnrecoverableBreakdown { lambda_max: f64 },

    #[error("Gauss-Newton iteration diverged after {} iterations", .last.iterations)]
    Divergence { last: Box<GnResult> },

    #[error("unknown surface `{0}`")]
    UnknownSurface(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("relative error undefined for a zero reference surface")]
    UndefinedMetric,
}
