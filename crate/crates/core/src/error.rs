use thiserror::Error;

/// Errors raised across the estimation, modelling and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("{what}: need at least {needed}, got {got}")]
    Length {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("covariance error: {0}")]
    Covariance(String),

    #[error("bootstrap error: {0}")]
    Bootstrap(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("degenerate statistic: {0}")]
    DegenerateStatistic(String),

    #[error("variance recursion error: {0}")]
    Recursion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
