use thiserror::Error;

/// Errors produced by the identification toolkit.
#[derive(Debug, Error)]
pub enum SysIdError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The matrix is in the wrong spectral regime for the requested operation.
    #[error("regime error: {0}")]
    Regime(String),

    #[error("unit-root ambiguity: eigenvalue magnitude {magnitude} lies within {gap} of the unit circle")]
    UnitRoot { magnitude: f64, gap: f64 },

    #[error("ill-conditioned Jordan structure: {0}")]
    IllConditionedJordan(String),

    #[error("singular Gram matrix: lambda_min = {lambda_min:e}")]
    SingularGram { lambda_min: f64 },

    #[error("state overflow at t = {t}")]
    Overflow { t: usize },

    #[error("irregular or unreachable: identification inconsistent ({0})")]
    Inconsistent(String),

    /// The bound is finite but the minimal `n` does not fit in a `u64`.
    #[error("prescribed sample size exceeds u64 range (n/(log n)^k must reach {rhs:e})")]
    SampleSizeOverflow { rhs: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl SysIdError {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            SysIdError::Config(_) | SysIdError::InvalidInput(_) | SysIdError::Io(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, SysIdError>;
