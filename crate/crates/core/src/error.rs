use thiserror::Error;

/// Unified error type for configuration, fitting, and I/O failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("failed to parse config: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("design matrix is rank deficient at column `{0}`")]
    RankDeficient(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn fit(msg: impl Into<String>) -> Self {
        Error::Fit(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
