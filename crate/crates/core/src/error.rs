use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or extents that do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An illegal configuration value (partition ratio, kernel size, mask, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or unsupported weight container.
    #[error("format error: {0}")]
    Format(String),

    /// A broken internal invariant, e.g. two calibrators mapped to one chunk.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss {loss} at step {step}")]
    NonFinite { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use dim_err;
