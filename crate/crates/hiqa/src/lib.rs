//! File formats, run configuration and commands for `hiqa-core`.
//!
//! Every command returns a [`Failure`] on error, whose [`Failure::exit_code`]
//! is the process exit status used by the binary.

pub mod commands;
pub mod config;
pub mod io;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Io(_) => 2,
            Failure::Config(_) => 3,
        }
    }
}

impl From<hiqa_core::Error> for Failure {
    fn from(e: hiqa_core::Error) -> Self {
        use hiqa_core::Error as E;
        match e {
            E::Config(_) | E::Shape(_) | E::Snapshot(_) => Failure::Config(e.to_string()),
            E::TokenOutOfVocab { .. } | E::LengthMismatch { .. } | E::UndefinedCorrelation(_) => {
                Failure::Validation(e.to_string())
            }
        }
    }
}
