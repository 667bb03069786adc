use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown model family `{0}`")]
    UnknownModel(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite {what} at u = {u}")]
    NonFiniteModel { what: &'static str, u: f64 },

    #[error("grid mismatch: expected (L = {expected_len}, N = {expected_cells}), got (L = {got_len}, N = {got_cells})")]
    GridMismatch {
        expected_len: f64,
        expected_cells: usize,
        got_len: f64,
        got_cells: usize,
    },

    #[error("grid with {cells} cells cannot resolve {modes} kick modes (need at least {required})")]
    UnderResolved {
        cells: usize,
        modes: usize,
        required: usize,
    },

    #[error("non-finite state produced at step {step} (t = {time})")]
    Blowup { step: u64, time: f64 },

    #[error("exponential overflow in {context} (exponent {exponent}); rescale the input")]
    Overflow { context: &'static str, exponent: f64 },

    #[error("{what} must be positive, found {value} at cell {cell}")]
    NonPositive {
        what: &'static str,
        value: f64,
        cell: usize,
    },

    #[error("kick list does not match trajectory: {0}")]
    KickMismatch(String),

    #[error("path {path} (seed {seed}) failed: {source}")]
    PathFailed {
        path: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("binary field record is malformed: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
