//! Symbolic note alignment: match the notes of two performances (or a score
//! and a performance) of the same piece, given as MIDI files.
//!
//! The pipeline tokenizes each note sequence into structured four-token
//! blocks, runs a transformer encoder over the concatenated pair to produce a
//! note-to-note similarity matrix, and decodes that matrix into one-to-one
//! note matches with greedy, prediction-head, or DTW-based extractors.
//! Training pairs are synthesized by augmenting real sequences with timing
//! noise and structural mismatches while tracking ground truth.

pub mod alignment;
pub mod augment;
pub mod error;
pub mod eval;
pub mod extract;
pub mod model;
pub mod note;
pub mod smf;
pub mod tokenizer;

pub use alignment::{AlignmentPair, MatchIndex};
pub use eval::MatchScore;
pub use extract::{MatchPrediction, TimeMapping, WarpingPath};
pub use error::{Error, Result};
pub use model::{Checkpoint, ModelConfig, Preset};
pub use note::{Note, NoteSequence, TICKS_PER_BEAT};
pub use smf::{load_midi, save_midi};
pub use tokenizer::{TokenBlock, TokenBlockSequence, TokenVocabulary};
