use thiserror::Error;

/// Errors surfaced by the library. Validation problems are the caller's fault,
/// numerical problems are failures of a fit or statistic.
#[derive(Debug, Error)]
pub enum CrtError {
    #[error("{0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("complete or quasi-complete separation detected")]
    Separation,
    #[error("rank-deficient design; aliased columns: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("config error: {0}")]
    Config(String),
}

impl CrtError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CrtError::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CrtError::Numerical(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CrtError::Numerical(_) | CrtError::Separation | CrtError::RankDeficient(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CrtError>;
