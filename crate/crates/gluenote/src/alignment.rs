//! Note-to-note alignments and their on-disk format.
//!
//! An alignment is a set of index pairs between two note sequences. A note
//! matched to [`MatchIndex::Default`] is unmatched; in similarity matrices the
//! default occupies row/column 0 and real note `i` occupies row/column `i + 1`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::note::NoteSequence;

pub const ALIGNMENT_HEADER: &str = "#gluenote-match v1";

/// A reference to a note of one sequence, or the default-note sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MatchIndex {
    /// The prepended default note; being matched to it means "unmatched".
    Default,
    /// A real note by its 0-based sequence index.
    Note(usize),
}

impl MatchIndex {
    pub fn is_default(&self) -> bool {
        matches!(self, MatchIndex::Default)
    }

    pub fn note(&self) -> Option<usize> {
        match self {
            MatchIndex::Default => None,
            MatchIndex::Note(i) => Some(*i),
        }
    }

    /// Row/column index in a similarity matrix (default note at 0).
    pub fn matrix_index(&self) -> usize {
        match self {
            MatchIndex::Default => 0,
            MatchIndex::Note(i) => i + 1,
        }
    }

    /// Inverse of [`MatchIndex::matrix_index`].
    pub fn from_matrix_index(row: usize) -> Self {
        if row == 0 {
            MatchIndex::Default
        } else {
            MatchIndex::Note(row - 1)
        }
    }
}

impl fmt::Display for MatchIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchIndex::Default => write!(f, "*"),
            MatchIndex::Note(i) => write!(f, "{i}"),
        }
    }
}

impl FromStr for MatchIndex {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "*" {
            Ok(MatchIndex::Default)
        } else {
            s.parse::<usize>()
                .map(MatchIndex::Note)
                .map_err(|_| format!("expected a note index or '*', got {s:?}"))
        }
    }
}

/// One matched (or unmatched) pair of note indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlignmentPair {
    /// Index into the first sequence.
    pub idx1: MatchIndex,
    /// Index into the second sequence.
    pub idx2: MatchIndex,
}

impl AlignmentPair {
    pub fn new(idx1: MatchIndex, idx2: MatchIndex) -> Self {
        AlignmentPair { idx1, idx2 }
    }

    pub fn matched(i: usize, j: usize) -> Self {
        AlignmentPair::new(MatchIndex::Note(i), MatchIndex::Note(j))
    }

    pub fn unmatched_s1(i: usize) -> Self {
        AlignmentPair::new(MatchIndex::Note(i), MatchIndex::Default)
    }

    pub fn unmatched_s2(j: usize) -> Self {
        AlignmentPair::new(MatchIndex::Default, MatchIndex::Note(j))
    }

    /// Both-real pairs are the ones that count toward match scores.
    pub fn real_pair(&self) -> Option<(usize, usize)> {
        match (self.idx1, self.idx2) {
            (MatchIndex::Note(i), MatchIndex::Note(j)) => Some((i, j)),
            _ => None,
        }
    }
}

/// Check the structural alignment invariants: no (default, default) pair and
/// no non-default index used twice.
pub fn check_pairs(pairs: &[AlignmentPair]) -> Result<()> {
    let mut seen1 = HashSet::new();
    let mut seen2 = HashSet::new();
    for p in pairs {
        if p.idx1.is_default() && p.idx2.is_default() {
            return Err(Error::validation("(default, default) pair is not allowed"));
        }
        if let Some(i) = p.idx1.note() {
            if !seen1.insert(i) {
                return Err(Error::validation(format!("s1 index {i} appears twice")));
            }
        }
        if let Some(j) = p.idx2.note() {
            if !seen2.insert(j) {
                return Err(Error::validation(format!("s2 index {j} appears twice")));
            }
        }
    }
    Ok(())
}

/// As [`check_pairs`], and additionally check every index is in range for the
/// given sequences.
pub fn check_pairs_against(
    pairs: &[AlignmentPair],
    s1: &NoteSequence,
    s2: &NoteSequence,
) -> Result<()> {
    check_pairs(pairs)?;
    for p in pairs {
        if let Some(i) = p.idx1.note() {
            if i >= s1.len() {
                return Err(Error::validation(format!(
                    "s1 index {i} out of range for {} notes",
                    s1.len()
                )));
            }
        }
        if let Some(j) = p.idx2.note() {
            if j >= s2.len() {
                return Err(Error::validation(format!(
                    "s2 index {j} out of range for {} notes",
                    s2.len()
                )));
            }
        }
    }
    Ok(())
}

/// Serialize an alignment to the tab-separated text format.
pub fn alignment_to_string(pairs: &[AlignmentPair]) -> String {
    let mut out = String::from(ALIGNMENT_HEADER);
    out.push('\n');
    for p in pairs {
        out.push_str(&format!("{}\t{}\n", p.idx1, p.idx2));
    }
    out
}

/// Parse the tab-separated alignment format, rejecting duplicate indices.
pub fn parse_alignment(text: &str) -> Result<Vec<AlignmentPair>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == ALIGNMENT_HEADER => {}
        Some((_, other)) => {
            return Err(Error::AlignmentParse {
                line: 1,
                message: format!("expected header {ALIGNMENT_HEADER:?}, got {other:?}"),
            })
        }
        None => {
            return Err(Error::AlignmentParse {
                line: 1,
                message: "empty file".into(),
            })
        }
    }
    let mut pairs = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (a, b) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::AlignmentParse {
                    line: i + 1,
                    message: format!("expected two tab-separated fields, got {line:?}"),
                })
            }
        };
        let idx1 = MatchIndex::from_str(a).map_err(|message| Error::AlignmentParse {
            line: i + 1,
            message,
        })?;
        let idx2 = MatchIndex::from_str(b).map_err(|message| Error::AlignmentParse {
            line: i + 1,
            message,
        })?;
        pairs.push(AlignmentPair::new(idx1, idx2));
    }
    check_pairs(&pairs)?;
    Ok(pairs)
}

/// Write an alignment to disk after validating it against its sequences.
pub fn save_alignment(
    pairs: &[AlignmentPair],
    s1: &NoteSequence,
    s2: &NoteSequence,
    path: impl AsRef<Path>,
) -> Result<()> {
    check_pairs_against(pairs, s1, s2)?;
    fs::write(path.as_ref(), alignment_to_string(pairs))
        .map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_alignment(path: impl AsRef<Path>) -> Result<Vec<AlignmentPair>> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    parse_alignment(&text)
}
