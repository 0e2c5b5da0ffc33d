//! Whole-file inference: slide a window over both sequences, run the model
//! per window, and average the local similarity matrices into one global
//! matrix.

use ndarray::Array2;

use super::checkpoint::Checkpoint;
use super::network::forward_pair;
use crate::error::{Error, Result};
use crate::note::NoteSequence;
use crate::tokenizer::tokenize;

/// Value of global-similarity cells no window ever touched. Far below any
/// real similarity, so extractors prefer the default note over these cells.
pub const SIMILARITY_SENTINEL: f32 = -1e9;

/// Compute the `(|s1|+1) x (|s2|+1)` global similarity matrix (row/column 0
/// are the default notes).
///
/// Windows of `max_side - 1` notes advance with half-window stride and are
/// paired across the sequences by equal note index; the short side is padded
/// with default blocks. Overlapping cells are averaged; each cell is written
/// only by windows that contain both of its real notes.
pub fn infer_global_similarity(
    s1: &NoteSequence,
    s2: &NoteSequence,
    checkpoint: &Checkpoint,
) -> Result<Array2<f32>> {
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::validation("cannot align an empty sequence"));
    }
    let config = &checkpoint.config;
    config.validate()?;
    if config.field_sizes != checkpoint.vocab.field_sizes() {
        return Err(Error::Checkpoint(
            "checkpoint config and vocabulary disagree on field sizes".into(),
        ));
    }
    let vocab = &checkpoint.vocab;
    let window = config.max_side - 1;
    let stride = (window / 2).max(1);
    let (len1, len2) = (s1.len(), s2.len());
    let longest = len1.max(len2);
    let num_windows = if longest <= window {
        1
    } else {
        (longest - window).div_ceil(stride) + 1
    };

    let mut sums = Array2::<f32>::zeros((len1 + 1, len2 + 1));
    let mut counts = Array2::<u16>::zeros((len1 + 1, len2 + 1));
    for k in 0..num_windows {
        let start = k * stride;
        let take = |seq: &NoteSequence, len: usize| -> Result<NoteSequence> {
            let real = len.saturating_sub(start).min(window);
            let begin = start.min(len);
            seq.window(begin, real)
        };
        let w1 = take(s1, len1)?;
        let w2 = take(s2, len2)?;
        let real1 = w1.len();
        let real2 = w2.len();
        let b1 = tokenize(&w1, vocab)?
            .prepend_default(vocab)?
            .padded_to(config.max_side, vocab)?;
        let b2 = tokenize(&w2, vocab)?
            .prepend_default(vocab)?
            .padded_to(config.max_side, vocab)?;
        let pass = forward_pair(&b1, &b2, &checkpoint.params, config, false)?;
        for i in 0..=real1 {
            let gi = if i == 0 { 0 } else { start + i };
            for j in 0..=real2 {
                let gj = if j == 0 { 0 } else { start + j };
                sums[[gi, gj]] += pass.sim[[i, j]];
                counts[[gi, gj]] += 1;
            }
        }
    }

    // Finalize in place: on large inputs the matrices dominate memory.
    for (cell, &count) in sums.iter_mut().zip(counts.iter()) {
        *cell = if count > 0 {
            *cell / count as f32
        } else {
            SIMILARITY_SENTINEL
        };
    }
    Ok(sums)
}
