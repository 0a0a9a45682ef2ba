use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid polynomial: {0}")]
    InvalidPolynomial(String),

    #[error("degree {degree} exceeds the supported maximum {max}")]
    DegreeOverflow { degree: usize, max: usize },

    #[error("state is not normalised: |norm^2 - 1| = {deviation:e} exceeds {tol:e}")]
    NotNormalized { deviation: f64, tol: f64 },

    #[error("anchor amplitude {0:e} is too small to decode")]
    VanishingAnchor(f64),

    #[error("register space of dimension {dim} exceeds the cap {cap}")]
    CapExceeded { dim: usize, cap: usize },

    #[error("epsilon {epsilon} out of range: epsilon * ||H|| = {product} must lie in [0, 1]")]
    EpsilonOutOfRange { epsilon: f64, product: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("power iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("post-selected sector has zero probability")]
    ZeroProbability,

    #[error("success probability {0:e} vanished")]
    VanishingProbability(f64),

    #[error("ancilla registers did not collapse to |0>: residual mass {0:e}")]
    RegisterNotCollapsed(f64),

    #[error("observable is not Hermitian: max deviation {0:e}")]
    NotHermitian(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
