use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Inconsistent shapes, counts or settings supplied by the caller.
    #[error("configuration error: {0}")]
    Config(String),
    /// A mathematically undefined input (e.g. infinite KL divergence).
    #[error("domain error: {0}")]
    Domain(String),
    /// An internal calling contract was broken.
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::Error::Config(alloc::format!($($arg)*)) };
}
pub(crate) use config_err;
