use std::path::PathBuf;

/// Errors raised by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum FgosError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("insufficient structure: need at least 2 structure pixels, found {found}")]
    InsufficientStructure { found: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("missing weight block `{0}`")]
    MissingWeight(String),

    #[error("format error: {0}")]
    Format(String),

    /// The underlying error is part of the message rather than the source
    /// chain so it is printed once.
    #[error("{}: {err}", path.display())]
    Io { path: PathBuf, err: std::io::Error },
}

pub type Result<T> = std::result::Result<T, FgosError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(FgosError::Dimension(msg.into()))
}
