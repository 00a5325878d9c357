use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("decode error at bit {bit_offset}: {reason}")]
    Decode { bit_offset: usize, reason: String },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("address fault at {va:#x}{}", event.map(|e| format!(" (event {e})")).unwrap_or_default())]
    Fault { va: u64, event: Option<usize> },

    #[error("trace error at line {line}: {reason}")]
    Trace { line: u64, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}
