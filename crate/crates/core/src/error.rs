use thiserror::Error;

/// Errors raised across the library. The CLI maps each variant onto an exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("pipeline `{pipeline}` has a zero standard error")]
    DegeneratePipeline { pipeline: String },

    #[error("covariance has rank zero after dropping eigenvalues below {epsilon:e} x largest")]
    RankZero { epsilon: f64 },

    #[error("pooling undefined: the ones vector is orthogonal to every retained eigenvector")]
    UndefinedPooling,

    #[error("contrast between `{first}` and `{second}` has non-positive variance {variance:e}")]
    DegenerateContrast {
        first: String,
        second: String,
        variance: f64,
    },

    #[error("covariance is not positive semi-definite (pivot {pivot:e} at row {row})")]
    NotPsd { row: usize, pivot: f64 },

    #[error("root bracketing failed: {0}")]
    Convergence(String),

    #[error("too many discarded bootstrap replicates: {discarded} of {requested}")]
    BootstrapDiscards { discarded: usize, requested: usize },

    #[error("{0}")]
    Io(String),

    #[error("usage: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            e if e.is_numerical() => 3,
            _ => 2,
        }
    }

    /// True for failures caused by the numbers rather than the shape of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegeneratePipeline { .. }
                | Error::RankZero { .. }
                | Error::UndefinedPooling
                | Error::DegenerateContrast { .. }
                | Error::NotPsd { .. }
                | Error::Convergence(_)
                | Error::BootstrapDiscards { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
