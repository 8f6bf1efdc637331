use thiserror::Error;

/// Errors raised by the toolkit.
///
/// `Config` errors map to CLI exit code 2; everything else that escapes a
/// check is treated the same way by the binary.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("evaluation failed for {member} at x = {x}: value {value}")]
    Evaluation { member: String, x: f64, value: f64 },
    #[error("no analytic projection is registered and inner_draws = 0")]
    NoProjection,
    #[error("degenerate localization: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<S: Into<String>>(msg: S) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn invalid<S: Into<String>>(msg: S) -> Error {
    Error::InvalidInput(msg.into())
}
