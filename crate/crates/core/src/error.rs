use thiserror::Error;

/// Errors raised by the simulator and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A constructor or configuration received a value outside its valid range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A function was evaluated outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The propagation settings cannot resolve the requested dynamics.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// An analysis routine received too little data.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
