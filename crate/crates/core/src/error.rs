use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Failure classes shared by every module.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    InvalidArgument(String),
    /// A configuration value is unknown or inconsistent.
    Config(String),
    /// A mathematical domain violation, e.g. the log of a zero occupancy.
    Domain(String),
    /// An iterative solver stopped before reaching its tolerance.
    Numerical { message: String, residual: f64 },
    /// A distribution degenerated (all weights zero).
    Degenerate(String),
    /// A table lookup referenced a pair outside the table.
    Lookup(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Numerical { message, residual } => {
                write!(f, "numerical error: {message} (residual {residual:e})")
            }
            Error::Degenerate(m) => write!(f, "degenerate distribution: {m}"),
            Error::Lookup(m) => write!(f, "lookup error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
