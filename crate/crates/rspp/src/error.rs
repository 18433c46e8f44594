//! Crate-wide error type.

/// Errors produced by the toolkit.
///
/// Numerical "soft failures" that an MCMC step can absorb (a proposal whose
/// density is zero, a non-positive-definite kernel matrix) are *not* errors;
/// they are signalled by `-inf` log densities. Errors are reserved for
/// conditions that invalidate a result: malformed inputs, broken invariants,
/// exhausted iteration caps, failed workers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid pattern: {0}")]
    InvalidPattern(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pattern file row {row}: {msg}")]
    PatternFormat { row: usize, msg: String },

    #[error("estimator undefined: {0}")]
    EstimatorUndefined(String),

    #[error("perfect sampler did not coalesce within backward horizon {horizon}")]
    NonCoalescence { horizon: f64 },

    #[error("rejection sampler exceeded {cap} trials")]
    RejectionCap { cap: u64 },

    #[error("spectral truncation failed: {0}")]
    Truncation(String),

    #[error("optimizer failed to converge: {0}")]
    NonConvergence(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("radius {r}: {source}")]
    ProfilePoint { r: f64, source: Box<Error> },

    #[error("iteration {iteration}: {source}")]
    ChainStep { iteration: u64, source: Box<Error> },

    #[error("iteration {iteration}: zeta estimate is zero at the current state (dead neighborhood)")]
    DeadNeighborhood { iteration: u64 },

    #[error("repeat loop exceeded {cap} batches")]
    RepeatCap { cap: u64 },

    #[error("pilot row {row}: resample cap {cap} exceeded")]
    ResampleCap { row: usize, cap: u64 },

    #[error("worker slot {slot}: {source}")]
    Pool { slot: usize, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
