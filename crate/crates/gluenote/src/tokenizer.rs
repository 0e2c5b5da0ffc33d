//! Fixed-length structured tokenization: four tokens per note, one per field
//! (time shift, pitch, duration, velocity), plus a prepended default note.
//!
//! Pitch is encoded raw; the other fields are quantized to configurable bin
//! tables. Each field reserves one dedicated id for the default note so it
//! stays distinguishable from a real note at onset 0.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::note::{Note, NoteSequence};

/// Notes per sequence window; with the default note prepended this yields
/// sequences of up to [`MAX_BLOCKS`] blocks.
pub const MAX_WINDOW_NOTES: usize = 512;
/// Maximum blocks per tokenized sequence (window plus default note).
pub const MAX_BLOCKS: usize = MAX_WINDOW_NOTES + 1;
/// Tokens per note.
pub const TOKENS_PER_NOTE: usize = 4;

const PITCH_VALUES: usize = 128;

/// The four token fields of a note, in block order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    TimeShift,
    Pitch,
    Duration,
    Velocity,
}

impl Field {
    pub const ALL: [Field; TOKENS_PER_NOTE] = [
        Field::TimeShift,
        Field::Pitch,
        Field::Duration,
        Field::Velocity,
    ];
}

/// Bin tables for the quantized fields, loaded from config or built from the
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenVocabulary {
    pub time_shift_bins: Vec<u32>,
    pub duration_bins: Vec<u32>,
    pub velocity_bins: Vec<u8>,
}

impl Default for TokenVocabulary {
    fn default() -> Self {
        // ~10-tick resolution up to 1000 ticks, then a coarse tail; values
        // above the last bin clamp to it.
        let mut time_shift_bins: Vec<u32> = (0..=100).map(|i| i * 10).collect();
        time_shift_bins.extend((6..=24).map(|i| i * 200));
        let mut duration_bins: Vec<u32> = vec![1];
        duration_bins.extend(time_shift_bins.iter().copied().skip(1));
        let velocity_bins: Vec<u8> = (0..32).map(|i| 1 + 4 * i).collect();
        TokenVocabulary {
            time_shift_bins,
            duration_bins,
            velocity_bins,
        }
    }
}

fn check_bins<T: Copy + Ord + std::fmt::Display>(name: &str, bins: &[T]) -> Result<()> {
    if bins.is_empty() {
        return Err(Error::Config(format!("{name} bin table is empty")));
    }
    for w in bins.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Config(format!(
                "{name} bins must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Nearest bin by value; exact midpoints round to the upper bin.
fn nearest_bin<T: Copy + Ord + std::ops::Sub<Output = T>>(bins: &[T], value: T) -> usize {
    match bins.binary_search(&value) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i == bins.len() => bins.len() - 1,
        Err(i) => {
            let below = value - bins[i - 1];
            let above = bins[i] - value;
            if below < above {
                i - 1
            } else {
                i
            }
        }
    }
}

impl TokenVocabulary {
    pub fn validate(&self) -> Result<()> {
        check_bins("time_shift", &self.time_shift_bins)?;
        check_bins("duration", &self.duration_bins)?;
        check_bins("velocity", &self.velocity_bins)?;
        if *self.duration_bins.first().unwrap() == 0 {
            return Err(Error::Config("duration bin 0 encodes an invalid note".into()));
        }
        if let Some(&v) = self.velocity_bins.iter().find(|&&v| v == 0 || v > 127) {
            return Err(Error::Config(format!("velocity bin {v} outside 1..=127")));
        }
        Ok(())
    }

    /// Token-id count per field, including the default id (the last id of
    /// each field).
    pub fn field_sizes(&self) -> [usize; TOKENS_PER_NOTE] {
        [
            self.time_shift_bins.len() + 1,
            PITCH_VALUES + 1,
            self.duration_bins.len() + 1,
            self.velocity_bins.len() + 1,
        ]
    }

    pub fn default_id(&self, field: Field) -> u16 {
        let sizes = self.field_sizes();
        (sizes[field as usize] - 1) as u16
    }

    pub fn time_shift_token(&self, shift: u32) -> u16 {
        nearest_bin(&self.time_shift_bins, shift) as u16
    }

    pub fn duration_token(&self, duration: u32) -> u16 {
        nearest_bin(&self.duration_bins, duration) as u16
    }

    pub fn velocity_token(&self, velocity: u8) -> u16 {
        nearest_bin(&self.velocity_bins, velocity) as u16
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let vocab: TokenVocabulary =
            toml::from_str(text).map_err(|e| Error::Config(format!("vocabulary: {e}")))?;
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("vocabulary serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text =
            fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_toml_string()).map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// The four token ids of one note.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBlock {
    pub time_shift: u16,
    pub pitch: u16,
    pub duration: u16,
    pub velocity: u16,
}

impl TokenBlock {
    pub fn ids(&self) -> [u16; TOKENS_PER_NOTE] {
        [self.time_shift, self.pitch, self.duration, self.velocity]
    }
}

/// A tokenized note window, optionally with the default-note block at
/// position 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBlockSequence {
    blocks: Vec<TokenBlock>,
    default_prepended: bool,
}

impl TokenBlockSequence {
    pub fn blocks(&self) -> &[TokenBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.blocks.len() * TOKENS_PER_NOTE
    }

    pub fn has_default_prefix(&self) -> bool {
        self.default_prepended
    }

    /// The blocks of real notes, skipping the default block if present.
    pub fn prepend_default(&self, vocab: &TokenVocabulary) -> Result<TokenBlockSequence> {
        prepend_default(self, vocab)
    }

    /// Append default blocks until the sequence holds `len` blocks, as
    /// window padding for inference.
    pub fn padded_to(&self, len: usize, vocab: &TokenVocabulary) -> Result<TokenBlockSequence> {
        if self.blocks.len() > len {
            return Err(Error::validation(format!(
                "sequence of {} blocks cannot pad down to {len}",
                self.blocks.len()
            )));
        }
        let mut blocks = self.blocks.clone();
        blocks.resize(len, default_block(vocab));
        Ok(TokenBlockSequence {
            blocks,
            default_prepended: self.default_prepended,
        })
    }

    pub fn real_blocks(&self) -> &[TokenBlock] {
        if self.default_prepended {
            &self.blocks[1..]
        } else {
            &self.blocks
        }
    }
}

/// Encode a note window. The first note's time shift encodes 0; every later
/// note encodes its quantized distance to the previous onset.
pub fn tokenize(seq: &NoteSequence, vocab: &TokenVocabulary) -> Result<TokenBlockSequence> {
    if seq.len() > MAX_WINDOW_NOTES {
        return Err(Error::validation(format!(
            "{} notes exceed the {MAX_WINDOW_NOTES}-note window; window the sequence first",
            seq.len()
        )));
    }
    let mut blocks = Vec::with_capacity(seq.len());
    let mut prev_onset = None;
    for n in seq.notes() {
        let shift = match prev_onset {
            None => 0,
            Some(p) => n.onset - p,
        };
        prev_onset = Some(n.onset);
        blocks.push(TokenBlock {
            time_shift: vocab.time_shift_token(shift),
            pitch: n.pitch as u16,
            duration: vocab.duration_token(n.duration),
            velocity: vocab.velocity_token(n.velocity),
        });
    }
    Ok(TokenBlockSequence {
        blocks,
        default_prepended: false,
    })
}

fn default_block(vocab: &TokenVocabulary) -> TokenBlock {
    TokenBlock {
        time_shift: vocab.default_id(Field::TimeShift),
        pitch: vocab.default_id(Field::Pitch),
        duration: vocab.default_id(Field::Duration),
        velocity: vocab.default_id(Field::Velocity),
    }
}

/// Insert the default-note block at position 0.
pub fn prepend_default(
    seq: &TokenBlockSequence,
    vocab: &TokenVocabulary,
) -> Result<TokenBlockSequence> {
    if seq.default_prepended {
        return Err(Error::validation("default note already prepended"));
    }
    if seq.len() + 1 > MAX_BLOCKS {
        return Err(Error::validation(format!(
            "prepending would exceed {MAX_BLOCKS} blocks"
        )));
    }
    let mut blocks = Vec::with_capacity(seq.len() + 1);
    blocks.push(default_block(vocab));
    blocks.extend_from_slice(&seq.blocks);
    Ok(TokenBlockSequence {
        blocks,
        default_prepended: true,
    })
}

/// Decode token blocks back to a note sequence. The default block at
/// position 0 (if present) is skipped; default ids anywhere else are an
/// error.
pub fn detokenize(seq: &TokenBlockSequence, vocab: &TokenVocabulary) -> Result<NoteSequence> {
    let sizes = vocab.field_sizes();
    let mut notes = Vec::with_capacity(seq.real_blocks().len());
    let mut onset: u32 = 0;
    for (k, block) in seq.real_blocks().iter().enumerate() {
        for (field, id) in Field::ALL.iter().zip(block.ids()) {
            let size = sizes[*field as usize];
            if id as usize >= size {
                return Err(Error::TokenDecode(format!(
                    "block {k}: id {id} out of vocabulary ({size} ids)"
                )));
            }
            if id == vocab.default_id(*field) {
                return Err(Error::TokenDecode(format!(
                    "block {k}: unexpected default id in {field:?}"
                )));
            }
        }
        onset += vocab.time_shift_bins[block.time_shift as usize];
        notes.push(Note::new(
            onset,
            block.pitch as u8,
            vocab.duration_bins[block.duration as usize],
            vocab.velocity_bins[block.velocity as usize],
        ));
    }
    NoteSequence::from_notes(notes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tables_have_expected_sizes() {
        let v = TokenVocabulary::default();
        assert_eq!(v.time_shift_bins.len(), 120);
        assert_eq!(v.duration_bins.len(), 120);
        assert_eq!(v.velocity_bins.len(), 32);
        assert_eq!(v.field_sizes(), [121, 129, 121, 33]);
        v.validate().unwrap();
    }

    #[test]
    fn zero_inter_onset_interval() {
        let v = TokenVocabulary::default();
        let seq = NoteSequence::from_notes(vec![
            Note::new(100, 60, 480, 64),
            Note::new(100, 64, 480, 64),
        ])
        .unwrap();
        let blocks = tokenize(&seq, &v).unwrap();
        assert_eq!(blocks.blocks()[1].time_shift, v.time_shift_token(0));
        assert_eq!(v.time_shift_bins[blocks.blocks()[1].time_shift as usize], 0);
    }

    #[test]
    fn pitch_token_is_raw_pitch() {
        let v = TokenVocabulary::default();
        let seq = NoteSequence::from_notes(vec![Note::new(0, 60, 480, 64)]).unwrap();
        let blocks = tokenize(&seq, &v).unwrap();
        assert_eq!(blocks.blocks()[0].pitch, 60);
    }

    #[test]
    fn nearest_bin_ties_round_up() {
        let bins = vec![0u32, 10, 20];
        assert_eq!(nearest_bin(&bins, 4), 0);
        assert_eq!(nearest_bin(&bins, 5), 1); // midpoint goes up
        assert_eq!(nearest_bin(&bins, 6), 1);
        assert_eq!(nearest_bin(&bins, 15), 2);
        assert_eq!(nearest_bin(&bins, 1000), 2); // clamp above
    }

    #[test]
    fn prepend_rules() {
        let v = TokenVocabulary::default();
        let empty = tokenize(&NoteSequence::from_notes(vec![]).unwrap(), &v).unwrap();
        let with_default = prepend_default(&empty, &v).unwrap();
        assert_eq!(with_default.len(), 1);
        assert_eq!(with_default.token_count(), 4);
        assert!(prepend_default(&with_default, &v).is_err());
    }

    #[test]
    fn full_window_is_513_blocks_2052_tokens() {
        let v = TokenVocabulary::default();
        let seq = NoteSequence::from_notes(
            (0..512)
                .map(|i| Note::new(i * 10, (21 + (i % 88)) as u8, 100, 64))
                .collect(),
        )
        .unwrap();
        let blocks = prepend_default(&tokenize(&seq, &v).unwrap(), &v).unwrap();
        assert_eq!(blocks.len(), 513);
        assert_eq!(blocks.token_count(), 2052);
    }

    #[test]
    fn detokenize_simple_block() {
        let v = TokenVocabulary::default();
        let seq = NoteSequence::from_notes(vec![Note::new(0, 60, 480, 65)]).unwrap();
        let blocks = tokenize(&seq, &v).unwrap();
        let back = detokenize(&blocks, &v).unwrap();
        assert_eq!(back.notes()[0].onset, 0);
        assert_eq!(back.notes()[0].pitch, 60);
        assert_eq!(back.notes()[0].duration, 480);
        assert_eq!(back.notes()[0].velocity, 65);
    }

    #[test]
    fn default_only_sequence_decodes_empty() {
        let v = TokenVocabulary::default();
        let empty = tokenize(&NoteSequence::from_notes(vec![]).unwrap(), &v).unwrap();
        let with_default = prepend_default(&empty, &v).unwrap();
        assert!(detokenize(&with_default, &v).unwrap().is_empty());
    }

    #[test]
    fn stray_default_id_is_an_error() {
        let v = TokenVocabulary::default();
        let seq = NoteSequence::from_notes(vec![
            Note::new(0, 60, 480, 64),
            Note::new(10, 62, 480, 64),
        ])
        .unwrap();
        let mut blocks = tokenize(&seq, &v).unwrap();
        blocks.blocks[1].pitch = v.default_id(Field::Pitch);
        assert!(matches!(
            detokenize(&blocks, &v),
            Err(Error::TokenDecode(_))
        ));
    }

    #[test]
    fn vocab_toml_roundtrip() {
        let v = TokenVocabulary::default();
        let text = v.to_toml_string();
        assert_eq!(TokenVocabulary::from_toml_str(&text).unwrap(), v);
        assert!(TokenVocabulary::from_toml_str("time_shift_bins = [5, 5]").is_err());
    }
}
