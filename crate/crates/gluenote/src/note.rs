//! Symbolic note and note-sequence types.
//!
//! All timing is expressed in MIDI ticks at a normalized resolution of
//! [`TICKS_PER_BEAT`] ticks per beat. Files with a different resolution are
//! rescaled on load.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized tick resolution. At the conventional 120 BPM one tick is
/// slightly longer than one millisecond.
pub const TICKS_PER_BEAT: u32 = 480;

/// Lowest pitch on a piano keyboard (A0).
pub const PIANO_PITCH_MIN: u8 = 21;
/// Highest pitch on a piano keyboard (C8).
pub const PIANO_PITCH_MAX: u8 = 108;

/// One symbolic note.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Note {
    /// Position of this note in its sequence, kept in sync by [`NoteSequence`].
    pub index: usize,
    /// Onset in ticks at [`TICKS_PER_BEAT`] resolution.
    pub onset: u32,
    /// MIDI pitch, 0..=127.
    pub pitch: u8,
    /// Duration in ticks, at least 1.
    pub duration: u32,
    /// MIDI velocity, 1..=127.
    pub velocity: u8,
}

impl Note {
    pub fn new(onset: u32, pitch: u8, duration: u32, velocity: u8) -> Self {
        Note {
            index: 0,
            onset,
            pitch,
            duration: duration.max(1),
            velocity,
        }
    }

    fn check(&self) -> Result<()> {
        if self.pitch > 127 {
            return Err(Error::validation(format!("pitch {} out of range", self.pitch)));
        }
        if self.velocity == 0 || self.velocity > 127 {
            return Err(Error::validation(format!(
                "velocity {} out of range 1..=127",
                self.velocity
            )));
        }
        if self.duration == 0 {
            return Err(Error::validation("duration must be at least 1 tick"));
        }
        Ok(())
    }
}

/// An ordered sequence of notes from one source file (or one synthetic copy).
///
/// Notes are sorted by `(onset, pitch)` with ties kept in order of appearance,
/// and `note.index` always equals the note's position in the list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteSequence {
    notes: Vec<Note>,
    pub source_path: String,
    /// Ticks-per-beat of the source file before rescaling.
    pub original_ppq: u16,
}

impl NoteSequence {
    /// Build a sequence, sorting and re-indexing the given notes.
    pub fn new(notes: Vec<Note>, source_path: impl Into<String>, original_ppq: u16) -> Result<Self> {
        for n in &notes {
            n.check()?;
        }
        let mut seq = NoteSequence {
            notes,
            source_path: source_path.into(),
            original_ppq,
        };
        seq.normalize();
        Ok(seq)
    }

    /// Sequence with no provenance, for synthetic data and tests.
    pub fn from_notes(notes: Vec<Note>) -> Result<Self> {
        Self::new(notes, "<synthetic>", TICKS_PER_BEAT as u16)
    }

    fn normalize(&mut self) {
        // Stable sort keeps equal (onset, pitch) notes in file order.
        self.notes.sort_by_key(|n| (n.onset, n.pitch));
        for (i, n) in self.notes.iter_mut().enumerate() {
            n.index = i;
        }
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Note> {
        self.notes.get(index)
    }

    /// Contiguous window `[start, start + len)` as a new sequence with onsets
    /// rebased so the first note starts at tick 0.
    pub fn window(&self, start: usize, len: usize) -> Result<NoteSequence> {
        if start + len > self.notes.len() {
            return Err(Error::validation(format!(
                "window {}..{} out of range for {} notes",
                start,
                start + len,
                self.notes.len()
            )));
        }
        let base = if len == 0 { 0 } else { self.notes[start].onset };
        let notes = self.notes[start..start + len]
            .iter()
            .map(|n| Note::new(n.onset - base, n.pitch, n.duration, n.velocity))
            .collect();
        NoteSequence::new(notes, self.source_path.clone(), self.original_ppq)
    }

    /// Shift every pitch by `semitones`, failing if any result leaves the
    /// piano range.
    pub fn transposed(&self, semitones: i32) -> Result<NoteSequence> {
        let notes = self
            .notes
            .iter()
            .map(|n| {
                let p = n.pitch as i32 + semitones;
                if p < PIANO_PITCH_MIN as i32 || p > PIANO_PITCH_MAX as i32 {
                    return Err(Error::validation(format!(
                        "transposition by {semitones} moves pitch {} outside the piano range",
                        n.pitch
                    )));
                }
                Ok(Note::new(n.onset, p as u8, n.duration, n.velocity))
            })
            .collect::<Result<Vec<_>>>()?;
        NoteSequence::new(notes, self.source_path.clone(), self.original_ppq)
    }

    /// Largest transposition interval (down, up) that keeps every pitch on
    /// the piano keyboard.
    pub fn legal_transposition_range(&self) -> (i32, i32) {
        let lo = self.notes.iter().map(|n| n.pitch).min().unwrap_or(PIANO_PITCH_MIN);
        let hi = self.notes.iter().map(|n| n.pitch).max().unwrap_or(PIANO_PITCH_MAX);
        (
            PIANO_PITCH_MIN as i32 - lo as i32,
            PIANO_PITCH_MAX as i32 - hi as i32,
        )
    }
}
