use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("no value for node {0}")]
    MissingNode(usize),

    #[error("node {0} already exists")]
    DuplicateNode(usize),

    #[error("invalid construction: {0}")]
    Construction(String),

    #[error("damped normal equations are singular (lambda reached {lambda:e})")]
    IllConditioned { lambda: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
