use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("stale or mismatched activation trace: {0}")]
    Trace(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("format error in section `{section}`: {message}")]
    Format { section: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            found,
        })
    }
}

pub(crate) fn config_err(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}
