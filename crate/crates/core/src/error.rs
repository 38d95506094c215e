use thiserror::Error;

/// Errors raised by the inference engines, solvers and file formats.
#[derive(Debug, Error)]
pub enum LsapcError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Triangular factor of the β precision has a (near) zero pivot.
    #[error("ill-conditioned β precision: |R[{index},{index}]| = {value:e} below tolerance")]
    Conditioning { index: usize, value: f64 },

    /// Cholesky of the noise correlation matrix failed.
    #[error("correlation matrix B(xi = {xi}) is not positive definite")]
    NotPositiveDefinite { xi: f64 },

    /// Σ assembly in the variational update lost positive definiteness.
    #[error("variational covariance is not positive definite at iteration {iteration}")]
    VbNumerical { iteration: usize },

    /// A Gibbs iteration failed; wraps the underlying sampler error.
    #[error("Gibbs sampler failed at iteration {iteration}: {source}")]
    Chain {
        iteration: usize,
        #[source]
        source: Box<LsapcError>,
    },

    /// Chib's ordinate estimate for the given block was not finite.
    #[error("marginal likelihood estimation failed in block {block}")]
    Estimation { block: &'static str },

    #[error("empty chain")]
    EmptyChain,

    #[error("data format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LsapcError {
    /// Process exit code for this error class: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            LsapcError::Config(_) | LsapcError::InvalidParameter(_) | LsapcError::Json(_) => 2,
            LsapcError::DimensionMismatch(_)
            | LsapcError::Format(_)
            | LsapcError::Io(_)
            | LsapcError::Csv(_)
            | LsapcError::EmptyChain => 3,
            LsapcError::NonFinite(_)
            | LsapcError::Conditioning { .. }
            | LsapcError::NotPositiveDefinite { .. }
            | LsapcError::VbNumerical { .. }
            | LsapcError::Chain { .. }
            | LsapcError::Estimation { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, LsapcError>;
