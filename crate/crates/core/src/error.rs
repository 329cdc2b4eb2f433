use thiserror::Error;

/// Every failure the engine can report, grouped by category.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("state error: {0}")]
    State(String),
    #[error("coder error: {0}")]
    Coder(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code for the CLI. 0 is success, 1 a failed self-test,
    /// 2 a usage error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) => 10,
            Error::Index(_) => 11,
            Error::Config(_) => 12,
            Error::Domain(_) => 13,
            Error::State(_) => 14,
            Error::Coder(_) => 15,
            Error::Format(_) => 16,
            Error::Io(_) => 17,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
