use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// A tensor or configuration dimension does not match what the network expects.
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    /// An argument is outside the documented domain of an operation.
    Contract(String),
    /// An operation was used out of order (e.g. backward without forward caches).
    Usage(&'static str),
    /// A gradient entry was NaN or infinite.
    NonFinite { layer: String },
    /// Invalid configuration value.
    Config(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                what,
                expected,
                actual,
            } => write!(
                f,
                "shape mismatch in {what}: expected {expected}, got {actual}"
            ),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::NonFinite { layer } => write!(f, "non-finite gradient in {layer}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! contract {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::Error::Contract(alloc::format!($($arg)*)));
        }
    };
}
pub(crate) use contract;
