use alloc::string::String;

/// Errors raised by the training core.
///
/// The categories map one-to-one onto the runner's exit codes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid configuration, shapes that do not conform, infeasible instances.
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation was called in a state where it is not allowed.
    #[error("usage error: {0}")]
    Usage(String),
    /// A loss or parameter became NaN/Inf.
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use usage_err;
