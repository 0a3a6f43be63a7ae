use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("constant column {name:?} (index {column}) cannot be standardized")]
    ConstantColumn { column: usize, name: String },

    #[error("invalid index grouping: {0}")]
    IndexSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("matrix is not positive definite after jitter up to {max_jitter:e}")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("covariate matrix is rank deficient")]
    RankDeficient,

    #[error("posterior chain is empty")]
    EmptyChain,

    #[error("index {index} is never included in the posterior; its curve is undefined")]
    UndefinedCurve { index: usize },

    #[error("sampler failed: {0}")]
    Sampler(String),

    #[error("chain file: {0}")]
    ChainFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::RankDeficient | Error::Sampler(_)
        )
    }
}
