use thiserror::Error;

/// Failure modes shared across the library.
///
/// `Invalid` marks inputs that violate a documented precondition (bad prime,
/// mismatched dimensions, malformed instance files).  `Budget` marks work that
/// was refused because a configured cap would be exceeded; the computation is
/// well-defined, just too large.  `Internal` marks broken invariants that
/// callers cannot trigger with valid input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn budget(msg: impl Into<String>) -> Self {
        Error::Budget(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
