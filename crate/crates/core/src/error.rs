use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },

    #[error("span {start}..{end} out of range for sequence of length {len}")]
    Range { start: usize, end: usize, len: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("malformed sequence: {0}")]
    Format(String),

    #[error("paradigm {paradigm} cannot be scored with a {direction} model")]
    Contract { paradigm: String, direction: String },

    #[error("non-finite loss at step {step} (batch {batch})")]
    NonFiniteLoss { step: usize, batch: usize },

    #[error("could not draw distinct negatives: {0}")]
    Generation(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),
}

pub type Result<T> = std::result::Result<T, Error>;
