use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the simulation and testing primitives.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A step produced a NaN or infinite coordinate.
    #[error("non-finite state produced from {state:?}")]
    NonFinite { state: Vec<f64> },
    /// The path did not leave the ball before the time budget ran out.
    #[error("no exit from ball of radius {radius} before t = {max_time}")]
    Timeout { radius: f64, max_time: f64 },
    /// Inconsistent inputs, e.g. a method that does not support the dimension.
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
