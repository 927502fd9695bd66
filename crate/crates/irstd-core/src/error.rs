//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

use crate::tensor::Shape;

/// Errors raised by contract violations and numerical failures.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two tensors that must agree in shape do not. The message names the
    /// operation and the role of each operand.
    ShapeMismatch {
        op: &'static str,
        expected: Shape,
        got: Shape,
    },
    /// A scalar argument or configuration field is out of its valid range.
    InvalidArgument(String),
    /// An iterative routine failed to reach its contract (non-convergence,
    /// non-finite values, ...).
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, expected, got } => {
                write!(f, "{op}: shape mismatch, expected {expected} got {got}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

/// Shorthand for `Error::InvalidArgument` with formatted text.
#[macro_export]
macro_rules! invalid_arg {
    ($($t:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($t)*))
    };
}
