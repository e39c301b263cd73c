use alloc::string::String;

/// Errors raised by the library.
///
/// Reward and parsing paths are total and never produce these; they come
/// from configuration checks, corrupt inputs and undefined statistics.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("token id {token} is outside the vocabulary of size {vocab}")]
    TokenOutOfVocab { token: usize, vocab: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("corrupt snapshot: {0}")]
    Snapshot(String),
}

pub type Result<T> = core::result::Result<T, Error>;
