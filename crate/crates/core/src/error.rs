use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("design matrix is rank deficient; dependent columns: {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("model size: m = {m} areas must exceed p = {p} covariates")]
    ModelSize { m: usize, p: usize },

    #[error("operation not supported for the log transform: {0}")]
    Unsupported(&'static str),

    #[error("root solver failed: {0}")]
    Solver(String),

    #[error("at lambda = {lambda}: {source}")]
    AtLambda {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_lambda(self, lambda: f64) -> Self {
        Error::AtLambda { lambda, source: Box::new(self) }
    }
}
