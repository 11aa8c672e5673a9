use thiserror::Error;

/// Errors raised by the simulation and verification toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument is malformed: non-finite coordinates, mismatched sizes,
    /// an undefined direction and so on.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A query was made outside the region where it is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration violates one of its invariants (CFL, bin width, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation precondition was not met by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Two objects that must evolve together are out of step.
    #[error("state error: {0}")]
    State(String),

    /// A density provider was queried at a time it does not cover.
    #[error("time {t} is outside the covered interval [{start}, {end}]")]
    TimeCoverage { t: f64, start: f64, end: f64 },

    /// The a-priori envelope `f0 / (1 - C f0 t)` is only finite before its
    /// blow-up time.
    #[error("t = {t} is at or past the blow-up time {blow_up}")]
    BlowUp { t: f64, blow_up: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
