use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Structural problem in a Standard MIDI File, reported with the byte
    /// offset at which decoding failed.
    #[error("MIDI parse error at byte {offset}: {message}")]
    MidiParse { offset: usize, message: String },

    /// The file decoded fine but contains no sounding notes.
    #[error("no note events in {path}")]
    EmptySequence { path: PathBuf },

    #[error("alignment file parse error at line {line}: {message}")]
    AlignmentParse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("token decode error: {0}")]
    TokenDecode(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// Non-finite loss or activations during training.
    #[error("training diverged at step {step}: {message}")]
    Divergence { step: u64, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
