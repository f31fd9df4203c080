use thiserror::Error;

/// Errors raised across the crate. Every failing validation names the
/// violated constraint.
#[derive(Debug, Error)]
pub enum Error {
  #[error("parameter error: {0}")]
  Parameter(String),

  #[error("divergent integral {what}: {detail}")]
  Divergence { what: String, detail: String },

  #[error("coverage error: {0}")]
  Coverage(String),

  #[error("statistics error: {0}")]
  Statistics(String),

  #[error("numerical failure: {0}")]
  Numerical(String),

  #[error("config validation failed for `{field}`: {constraint}")]
  Validation { field: String, constraint: String },

  #[error("unknown {kind} `{name}`")]
  Lookup { kind: &'static str, name: String },

  #[error("usage: {0}")]
  Usage(String),

  #[error(transparent)]
  Io(#[from] std::io::Error),

  #[error(transparent)]
  Json(#[from] serde_json::Error),

  #[error(transparent)]
  Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
  Err(Error::Parameter(msg.into()))
}

pub(crate) fn diverge<T>(what: impl Into<String>, detail: impl Into<String>) -> Result<T> {
  Err(Error::Divergence {
    what: what.into(),
    detail: detail.into(),
  })
}
