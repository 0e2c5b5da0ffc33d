//! Synthetic training and evaluation pairs.
//!
//! A pair is built by copying a note window and distorting the copy with
//! timing/velocity/duration noise and structural mismatches (repeats, skips,
//! trills, insertions, deletions), while tracking ground-truth note matches
//! through every stage. All randomness is drawn from a seeded generator, so
//! identical (input, config, seed) always produces identical output.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentPair, MatchIndex};
use crate::error::{Error, Result};
use crate::note::{Note, NoteSequence};
use crate::tokenizer::MAX_WINDOW_NOTES;

/// Noise magnitudes, mismatch probabilities, and clip bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Sigma of the global tempo factor g ~ N(1, sigma), one draw per pair.
    pub tempo_global_sigma: f64,
    /// Sigma of the per-note tempo exponent n ~ N(0, sigma); the local factor
    /// is 2^n.
    pub tempo_local_sigma: f64,
    /// Uniform onset noise in ticks, drawn from [-onset_noise, +onset_noise].
    pub onset_noise: u32,
    /// Uniform velocity noise, drawn from [-velocity_noise, +velocity_noise].
    pub velocity_noise: u8,
    /// Uniform duration noise in ticks.
    pub duration_noise: u32,
    pub p_repeat: f64,
    pub repeat_len: (usize, usize),
    pub p_skip: f64,
    pub skip_len: (usize, usize),
    pub p_insertion: f64,
    pub p_deletion: f64,
    pub p_trill: f64,
    pub trill_len: (usize, usize),
    /// Apply a random legal transposition to both sequences of a pair.
    pub transpose: bool,
    /// Clip for both the global factor g and each local factor 2^n.
    pub tempo_factor_clip: (f64, f64),
    /// Upper duration clip in ticks applied when duration noise is active.
    pub max_duration: u32,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            tempo_global_sigma: 0.5,
            tempo_local_sigma: 0.5,
            onset_noise: 50,
            velocity_noise: 10,
            duration_noise: 250,
            p_repeat: 1.0,
            repeat_len: (8, 200),
            p_skip: 1.0,
            skip_len: (8, 200),
            p_insertion: 0.2,
            p_deletion: 0.2,
            p_trill: 1.0,
            trill_len: (20, 100),
            transpose: true,
            tempo_factor_clip: (0.25, 4.0),
            max_duration: 4 * 480,
        }
    }
}

impl AugmentationConfig {
    /// All noise and probabilities off; augmentation becomes the identity.
    pub fn zero() -> Self {
        AugmentationConfig {
            tempo_global_sigma: 0.0,
            tempo_local_sigma: 0.0,
            onset_noise: 0,
            velocity_noise: 0,
            duration_noise: 0,
            p_repeat: 0.0,
            p_skip: 0.0,
            p_insertion: 0.0,
            p_deletion: 0.0,
            p_trill: 0.0,
            transpose: false,
            ..AugmentationConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_repeat", self.p_repeat),
            ("p_skip", self.p_skip),
            ("p_insertion", self.p_insertion),
            ("p_deletion", self.p_deletion),
            ("p_trill", self.p_trill),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        for (name, (lo, hi)) in [
            ("repeat_len", self.repeat_len),
            ("skip_len", self.skip_len),
            ("trill_len", self.trill_len),
        ] {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("{name} range ({lo}, {hi}) is empty")));
            }
        }
        if self.tempo_global_sigma < 0.0 || self.tempo_local_sigma < 0.0 {
            return Err(Error::Config("tempo sigmas must be nonnegative".into()));
        }
        let (lo, hi) = self.tempo_factor_clip;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!(
                "tempo_factor_clip ({lo}, {hi}) is not a positive range"
            )));
        }
        if self.max_duration == 0 {
            return Err(Error::Config("max_duration must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: AugmentationConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("augmentation: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("augmentation config serializes")
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

/// A synthetic pair with its ground-truth alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub s1: NoteSequence,
    pub s2: NoteSequence,
    pub truth: Vec<AlignmentPair>,
}

impl AugmentedPair {
    /// Identity pair: s2 is a copy of s1 and every note matches itself.
    pub fn identity(seq: &NoteSequence) -> Self {
        let truth = (0..seq.len()).map(|i| AlignmentPair::matched(i, i)).collect();
        AugmentedPair {
            s1: seq.clone(),
            s2: seq.clone(),
            truth,
        }
    }

    /// Check the alignment-validity invariants: every note of both sequences
    /// appears in exactly one pair, no (default, default) pair, and matched
    /// notes have equal pitch.
    pub fn validate(&self) -> Result<()> {
        let mut used1 = vec![false; self.s1.len()];
        let mut used2 = vec![false; self.s2.len()];
        for p in &self.truth {
            if p.idx1.is_default() && p.idx2.is_default() {
                return Err(Error::validation("(default, default) pair"));
            }
            if let Some(i) = p.idx1.note() {
                if i >= used1.len() || used1[i] {
                    return Err(Error::validation(format!("s1 index {i} invalid or reused")));
                }
                used1[i] = true;
            }
            if let Some(j) = p.idx2.note() {
                if j >= used2.len() || used2[j] {
                    return Err(Error::validation(format!("s2 index {j} invalid or reused")));
                }
                used2[j] = true;
            }
            if let Some((i, j)) = p.real_pair() {
                let p1 = self.s1.notes()[i].pitch;
                let p2 = self.s2.notes()[j].pitch;
                if p1 != p2 {
                    return Err(Error::validation(format!(
                        "matched notes {i} and {j} differ in pitch ({p1} vs {p2})"
                    )));
                }
            }
        }
        if let Some(i) = used1.iter().position(|u| !u) {
            return Err(Error::validation(format!("s1 note {i} not covered")));
        }
        if let Some(j) = used2.iter().position(|u| !u) {
            return Err(Error::validation(format!("s2 note {j} not covered")));
        }
        Ok(())
    }
}

/// Note counts touched by each augmentation stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationStats {
    pub repeated: usize,
    pub skipped: usize,
    pub trill: usize,
    pub inserted: usize,
    pub deleted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Repeat,
    Skip,
    Trill,
}

/// A note of the augmented copy along with where it came from: `Some(i)` for
/// a survivor of s1 note `i`, `None` for synthetic material.
#[derive(Debug, Clone, Copy)]
struct Tagged {
    note: Note,
    origin: Option<usize>,
}

fn sort_tagged(notes: &mut [Tagged]) {
    notes.sort_by_key(|t| (t.note.onset, t.note.pitch));
}

/// Rebuild (sequence, truth) from tagged notes plus the s1 notes that no
/// longer have a partner.
fn finalize(
    tagged: Vec<Tagged>,
    s1_len: usize,
    source: &NoteSequence,
) -> Result<(NoteSequence, Vec<AlignmentPair>)> {
    let mut tagged = tagged;
    sort_tagged(&mut tagged);
    let mut partner_of_s1: Vec<Option<usize>> = vec![None; s1_len];
    let mut truth = Vec::with_capacity(tagged.len());
    for (j, t) in tagged.iter().enumerate() {
        if let Some(i) = t.origin {
            partner_of_s1[i] = Some(j);
        }
    }
    for (i, partner) in partner_of_s1.iter().enumerate() {
        match partner {
            Some(j) => truth.push(AlignmentPair::matched(i, *j)),
            None => truth.push(AlignmentPair::unmatched_s1(i)),
        }
    }
    for (j, t) in tagged.iter().enumerate() {
        if t.origin.is_none() {
            truth.push(AlignmentPair::unmatched_s2(j));
        }
    }
    let seq = NoteSequence::new(
        tagged.into_iter().map(|t| t.note).collect(),
        source.source_path.clone(),
        source.original_ppq,
    )?;
    Ok((seq, truth))
}

/// Split (s2, truth) back into tagged notes plus unmatched s1 indices, the
/// working representation of the per-stage operations.
fn to_tagged(s2: &NoteSequence, truth: &[AlignmentPair]) -> Result<(Vec<Tagged>, usize)> {
    let mut origin: Vec<Option<usize>> = vec![None; s2.len()];
    let mut s1_len = 0usize;
    for p in truth {
        if let Some(i) = p.idx1.note() {
            s1_len = s1_len.max(i + 1);
        }
        if let Some((i, j)) = p.real_pair() {
            if j >= s2.len() {
                return Err(Error::validation(format!("truth references s2 index {j}")));
            }
            origin[j] = Some(i);
        }
    }
    let tagged = s2
        .notes()
        .iter()
        .zip(origin)
        .map(|(n, origin)| Tagged { note: *n, origin })
        .collect();
    Ok((tagged, s1_len))
}

fn uniform_i64(rng: &mut ChaCha8Rng, magnitude: u32) -> i64 {
    rng.random_range(-(magnitude as i64)..=magnitude as i64)
}

fn clamp_u32(value: i64, lo: u32, hi: u32) -> u32 {
    value.clamp(lo as i64, hi as i64) as u32
}

fn tempo_factors(notes: usize, config: &AugmentationConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (clip_lo, clip_hi) = config.tempo_factor_clip;
    let g = if config.tempo_global_sigma > 0.0 {
        let normal = Normal::new(1.0, config.tempo_global_sigma).expect("validated sigma");
        normal.sample(rng).clamp(clip_lo, clip_hi)
    } else {
        1.0
    };
    (0..notes)
        .map(|_| {
            let local = if config.tempo_local_sigma > 0.0 {
                let normal = Normal::new(0.0, config.tempo_local_sigma).expect("validated sigma");
                2f64.powf(normal.sample(rng)).clamp(clip_lo, clip_hi)
            } else {
                1.0
            };
            g * local
        })
        .collect()
}

/// Stretch inter-onset intervals by the global and per-note tempo factors,
/// then add per-note onset/velocity/duration noise, clipping each result.
pub fn apply_feature_noise(
    seq: &NoteSequence,
    config: &AugmentationConfig,
    seed: u64,
) -> Result<NoteSequence> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tagged: Vec<Tagged> = seq
        .notes()
        .iter()
        .map(|n| Tagged {
            note: *n,
            origin: Some(n.index),
        })
        .collect();
    apply_feature_noise_tagged(&mut tagged, config, &mut rng);
    let (out, _) = finalize(tagged, seq.len(), seq)?;
    Ok(out)
}

fn apply_feature_noise_tagged(
    tagged: &mut Vec<Tagged>,
    config: &AugmentationConfig,
    rng: &mut ChaCha8Rng,
) {
    if tagged.is_empty() {
        return;
    }
    sort_tagged(tagged);
    if config.tempo_global_sigma > 0.0 || config.tempo_local_sigma > 0.0 {
        let factors = tempo_factors(tagged.len() - 1, config, rng);
        let mut cum = tagged[0].note.onset as f64;
        let mut prev_orig = tagged[0].note.onset;
        for (k, factor) in (1..tagged.len()).zip(factors) {
            let ioi = (tagged[k].note.onset - prev_orig) as f64;
            prev_orig = tagged[k].note.onset;
            cum += ioi * factor;
            tagged[k].note.onset = cum.round().max(0.0) as u32;
        }
    }
    if config.onset_noise > 0 {
        for t in tagged.iter_mut() {
            let d = uniform_i64(rng, config.onset_noise);
            t.note.onset = clamp_u32(t.note.onset as i64 + d, 0, u32::MAX);
        }
    }
    if config.velocity_noise > 0 {
        for t in tagged.iter_mut() {
            let d = uniform_i64(rng, config.velocity_noise as u32);
            t.note.velocity = clamp_u32(t.note.velocity as i64 + d, 1, 127) as u8;
        }
    }
    if config.duration_noise > 0 {
        for t in tagged.iter_mut() {
            let d = uniform_i64(rng, config.duration_noise);
            t.note.duration = clamp_u32(t.note.duration as i64 + d, 1, config.max_duration);
        }
    }
    sort_tagged(tagged);
}

/// What a segment injection actually did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentReport {
    pub applied: bool,
    pub notes: usize,
}

/// Inject one contiguous mismatch segment of the given kind.
///
/// Returns the updated pair data and a report; a sequence shorter than the
/// sampled segment length skips the augmentation and reports it.
pub fn inject_segment(
    s2: &NoteSequence,
    truth: &[AlignmentPair],
    kind: SegmentKind,
    config: &AugmentationConfig,
    seed: u64,
) -> Result<(NoteSequence, Vec<AlignmentPair>, SegmentReport)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut tagged, s1_len) = to_tagged(s2, truth)?;
    let report = inject_segment_tagged(&mut tagged, kind, config, &mut rng);
    let (seq, truth) = finalize(tagged, s1_len, s2)?;
    Ok((seq, truth, report))
}

fn median_positive_ioi(tagged: &[Tagged]) -> u32 {
    let mut iois: Vec<u32> = tagged
        .windows(2)
        .map(|w| w[1].note.onset - w[0].note.onset)
        .filter(|&d| d > 0)
        .collect();
    if iois.is_empty() {
        return 480;
    }
    iois.sort_unstable();
    iois[iois.len() / 2]
}

fn inject_segment_tagged(
    tagged: &mut Vec<Tagged>,
    kind: SegmentKind,
    config: &AugmentationConfig,
    rng: &mut ChaCha8Rng,
) -> SegmentReport {
    sort_tagged(tagged);
    let skipped = SegmentReport {
        applied: false,
        notes: 0,
    };
    let n = tagged.len();
    match kind {
        SegmentKind::Repeat => {
            let len = rng.random_range(config.repeat_len.0..=config.repeat_len.1);
            if n <= len {
                return skipped;
            }
            let start = rng.random_range(0..=n - len - 1);
            let span_start = tagged[start].note.onset;
            let span_end = tagged[start + len].note.onset;
            let shift = (span_end - span_start).max(1);
            let copies: Vec<Tagged> = tagged[start..start + len]
                .iter()
                .map(|t| {
                    let mut note = t.note;
                    note.onset += shift;
                    Tagged { note, origin: None }
                })
                .collect();
            for t in tagged[start + len..].iter_mut() {
                t.note.onset += shift;
            }
            tagged.extend(copies);
            sort_tagged(tagged);
            SegmentReport {
                applied: true,
                notes: len,
            }
        }
        SegmentKind::Skip => {
            let len = rng.random_range(config.skip_len.0..=config.skip_len.1);
            if n <= len {
                return skipped;
            }
            let start = rng.random_range(0..=n - len - 1);
            let span_start = tagged[start].note.onset;
            let span_end = tagged[start + len].note.onset;
            let shift = span_end - span_start;
            tagged.drain(start..start + len);
            for t in tagged[start..].iter_mut() {
                t.note.onset -= shift;
            }
            SegmentReport {
                applied: true,
                notes: len,
            }
        }
        SegmentKind::Trill => {
            let len = rng.random_range(config.trill_len.0..=config.trill_len.1);
            if n <= len || n < 2 {
                return skipped;
            }
            let pos = rng.random_range(1..n);
            let base_pitch = tagged[pos].note.pitch;
            let step = rng.random_range(1..=2u8);
            let upper = if base_pitch as i32 + step as i32 <= 127 {
                base_pitch + step
            } else {
                base_pitch - step
            };
            let velocity = tagged[pos].note.velocity;
            let mut gap = tagged[pos].note.onset - tagged[pos - 1].note.onset;
            let start_onset;
            if gap == 0 {
                // Trill before a chord: widen the gap and push everything back.
                gap = median_positive_ioi(tagged);
                start_onset = tagged[pos - 1].note.onset;
                for t in tagged[pos..].iter_mut() {
                    t.note.onset += gap;
                }
            } else {
                start_onset = tagged[pos - 1].note.onset;
            }
            let ioi = gap as f64 / len as f64;
            let dur = (ioi.round() as u32).max(1);
            for k in 0..len {
                let pitch = if k % 2 == 0 { base_pitch } else { upper };
                let onset = start_onset + (k as f64 * ioi).round() as u32;
                tagged.push(Tagged {
                    note: Note::new(onset, pitch, dur, velocity),
                    origin: None,
                });
            }
            sort_tagged(tagged);
            SegmentReport {
                applied: true,
                notes: len,
            }
        }
    }
}

/// Per-note random deletions and randomized-copy insertions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InsDelReport {
    pub inserted: usize,
    pub deleted: usize,
}

pub fn apply_insertions_deletions(
    s2: &NoteSequence,
    truth: &[AlignmentPair],
    config: &AugmentationConfig,
    seed: u64,
) -> Result<(NoteSequence, Vec<AlignmentPair>, InsDelReport)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut tagged, s1_len) = to_tagged(s2, truth)?;
    let report = insertions_deletions_tagged(&mut tagged, config, &mut rng);
    let (seq, truth) = finalize(tagged, s1_len, s2)?;
    Ok((seq, truth, report))
}

fn insertions_deletions_tagged(
    tagged: &mut Vec<Tagged>,
    config: &AugmentationConfig,
    rng: &mut ChaCha8Rng,
) -> InsDelReport {
    let mut report = InsDelReport::default();
    if config.p_deletion == 0.0 && config.p_insertion == 0.0 {
        return report;
    }
    sort_tagged(tagged);
    let mut out: Vec<Tagged> = Vec::with_capacity(tagged.len());
    for t in tagged.iter() {
        let delete = config.p_deletion > 0.0 && rng.random_bool(config.p_deletion);
        let insert = config.p_insertion > 0.0 && rng.random_bool(config.p_insertion);
        if !delete {
            out.push(*t);
        } else {
            report.deleted += 1;
        }
        if insert {
            // A fresh note near the original, never part of the ground truth.
            let mut note = t.note;
            note.onset = clamp_u32(
                note.onset as i64 + uniform_i64(rng, config.onset_noise.max(1)),
                0,
                u32::MAX,
            );
            note.velocity = clamp_u32(
                note.velocity as i64 + uniform_i64(rng, config.velocity_noise.max(1) as u32),
                1,
                127,
            ) as u8;
            note.duration = clamp_u32(
                note.duration as i64 + uniform_i64(rng, config.duration_noise.max(1)),
                1,
                config.max_duration,
            );
            out.push(Tagged { note, origin: None });
            report.inserted += 1;
        }
    }
    *tagged = out;
    sort_tagged(tagged);
    report
}

/// Shift both sequences of a pair by the same interval; the truth is
/// untouched.
pub fn transpose_pair(pair: &AugmentedPair, semitones: i32) -> Result<AugmentedPair> {
    Ok(AugmentedPair {
        s1: pair.s1.transposed(semitones)?,
        s2: pair.s2.transposed(semitones)?,
        truth: pair.truth.clone(),
    })
}

fn sub_seed(rng: &mut ChaCha8Rng) -> u64 {
    rng.next_u64()
}

/// Sample a training pair: a 512-note window of `seq` against a noisy,
/// mismatched copy, with exact ground truth.
///
/// Stage order: window, feature noise, trill, repeat, skip,
/// insertions/deletions, transposition.
pub fn make_training_pair(
    seq: &NoteSequence,
    config: &AugmentationConfig,
    seed: u64,
) -> Result<(AugmentedPair, AugmentationStats)> {
    config.validate()?;
    if seq.len() < MAX_WINDOW_NOTES {
        return Err(Error::validation(format!(
            "source has {} notes, need at least {MAX_WINDOW_NOTES}",
            seq.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..=seq.len() - MAX_WINDOW_NOTES);
    let s1 = seq.window(start, MAX_WINDOW_NOTES)?;
    let mut stats = AugmentationStats::default();

    let mut tagged: Vec<Tagged> = s1
        .notes()
        .iter()
        .map(|n| Tagged {
            note: *n,
            origin: Some(n.index),
        })
        .collect();

    let noise_seed = sub_seed(&mut rng);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    apply_feature_noise_tagged(&mut tagged, config, &mut noise_rng);

    for (kind, p) in [
        (SegmentKind::Trill, config.p_trill),
        (SegmentKind::Repeat, config.p_repeat),
        (SegmentKind::Skip, config.p_skip),
    ] {
        let stage_seed = sub_seed(&mut rng);
        if p > 0.0 && rng.random_bool(p) {
            let mut stage_rng = ChaCha8Rng::seed_from_u64(stage_seed);
            let report = inject_segment_tagged(&mut tagged, kind, config, &mut stage_rng);
            if report.applied {
                match kind {
                    SegmentKind::Repeat => stats.repeated += report.notes,
                    SegmentKind::Skip => stats.skipped += report.notes,
                    SegmentKind::Trill => stats.trill += report.notes,
                }
            }
        }
    }

    let insdel_seed = sub_seed(&mut rng);
    let mut insdel_rng = ChaCha8Rng::seed_from_u64(insdel_seed);
    let report = insertions_deletions_tagged(&mut tagged, config, &mut insdel_rng);
    stats.inserted = report.inserted;
    stats.deleted = report.deleted;

    let (s2, truth) = finalize(tagged, s1.len(), &s1)?;
    let mut pair = AugmentedPair { s1, s2, truth };

    if config.transpose {
        let (lo1, hi1) = pair.s1.legal_transposition_range();
        let (lo2, hi2) = pair.s2.legal_transposition_range();
        let lo = lo1.max(lo2);
        let hi = hi1.min(hi2);
        if lo <= hi {
            let semitones = rng.random_range(lo..=hi);
            if semitones != 0 {
                pair = transpose_pair(&pair, semitones)?;
            }
        }
    }
    Ok((pair, stats))
}

/// Crop both sides of a pair to at most `max` notes, re-pointing truth pairs
/// whose partner fell off the end to the default note.
pub fn crop_pair(pair: &AugmentedPair, max: usize) -> Result<AugmentedPair> {
    let keep1 = pair.s1.len().min(max);
    let keep2 = pair.s2.len().min(max);
    let s1 = pair.s1.window(0, keep1)?;
    let s2 = pair.s2.window(0, keep2)?;
    enum Side {
        Default,
        Cropped,
        Kept(usize),
    }
    let classify = |idx: MatchIndex, keep: usize| match idx.note() {
        None => Side::Default,
        Some(i) if i < keep => Side::Kept(i),
        Some(_) => Side::Cropped,
    };
    let mut truth = Vec::new();
    for p in &pair.truth {
        match (classify(p.idx1, keep1), classify(p.idx2, keep2)) {
            (Side::Kept(i), Side::Kept(j)) => truth.push(AlignmentPair::matched(i, j)),
            (Side::Kept(i), _) => truth.push(AlignmentPair::unmatched_s1(i)),
            (_, Side::Kept(j)) => truth.push(AlignmentPair::unmatched_s2(j)),
            _ => {}
        }
    }
    Ok(AugmentedPair { s1, s2, truth })
}

/// Insert one contiguous randomly-sampled mismatch segment per 512-note
/// window into each side of an aligned pair.
///
/// Segment length is `max(100, round(fraction * 512))` notes, so the default
/// fraction of 0.2 marks roughly a fifth of each side as unmatched.
pub fn make_eval_mismatch_pair(
    s1: &NoteSequence,
    s2: &NoteSequence,
    truth: &[AlignmentPair],
    fraction: f64,
    seed: u64,
) -> Result<AugmentedPair> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::validation(format!(
            "mismatch fraction {fraction} outside (0, 1)"
        )));
    }
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::validation("empty input sequence"));
    }
    crate::alignment::check_pairs_against(truth, s1, s2)?;
    let seg_len = ((fraction * MAX_WINDOW_NOTES as f64).round() as usize).max(100);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Tag each side with its original index, insert segments, then remap the
    // truth through the surviving positions.
    let mut sides: Vec<Vec<Tagged>> = [s1, s2]
        .iter()
        .map(|s| {
            s.notes()
                .iter()
                .map(|n| Tagged {
                    note: *n,
                    origin: Some(n.index),
                })
                .collect()
        })
        .collect();
    for side in sides.iter_mut() {
        sort_tagged(side);
        let n = side.len();
        let windows = n.div_ceil(MAX_WINDOW_NOTES).max(1);
        let spots: Vec<usize> = (0..windows)
            .map(|w| {
                let win_start = w * MAX_WINDOW_NOTES;
                let win_end = ((w + 1) * MAX_WINDOW_NOTES).min(n);
                rng.random_range(win_start..win_end)
            })
            .collect();
        // Later windows first so earlier positions stay valid.
        for &pos in spots.iter().rev() {
            insert_random_segment(side, pos, seg_len, &mut rng);
        }
    }
    let [tagged1, tagged2] = <[Vec<Tagged>; 2]>::try_from(sides).unwrap();

    let (new_s1, pos1) = positions(tagged1, s1)?;
    let (new_s2, pos2) = positions(tagged2, s2)?;
    let mut new_truth = Vec::new();
    let mut covered1 = vec![false; new_s1.len()];
    let mut covered2 = vec![false; new_s2.len()];
    for p in truth {
        let idx1 = match p.idx1.note() {
            Some(i) => MatchIndex::Note(pos1[i]),
            None => MatchIndex::Default,
        };
        let idx2 = match p.idx2.note() {
            Some(j) => MatchIndex::Note(pos2[j]),
            None => MatchIndex::Default,
        };
        if let Some(i) = idx1.note() {
            covered1[i] = true;
        }
        if let Some(j) = idx2.note() {
            covered2[j] = true;
        }
        new_truth.push(AlignmentPair::new(idx1, idx2));
    }
    for (i, covered) in covered1.iter().enumerate() {
        if !covered {
            new_truth.push(AlignmentPair::unmatched_s1(i));
        }
    }
    for (j, covered) in covered2.iter().enumerate() {
        if !covered {
            new_truth.push(AlignmentPair::unmatched_s2(j));
        }
    }
    let pair = AugmentedPair {
        s1: new_s1,
        s2: new_s2,
        truth: new_truth,
    };
    pair.validate()?;
    Ok(pair)
}

/// Insert `seg_len` contiguous random-content notes before position `pos`,
/// pushing everything from `pos` on later in time.
fn insert_random_segment(side: &mut Vec<Tagged>, pos: usize, seg_len: usize, rng: &mut ChaCha8Rng) {
    let iois: Vec<u32> = side
        .windows(2)
        .map(|w| w[1].note.onset - w[0].note.onset)
        .filter(|&d| d > 0)
        .collect();
    let sample_ioi = |rng: &mut ChaCha8Rng| -> u32 {
        if iois.is_empty() {
            120
        } else {
            iois[rng.random_range(0..iois.len())]
        }
    };
    let start_onset = side[pos].note.onset;
    let mut onset = start_onset;
    let mut fresh = Vec::with_capacity(seg_len);
    for _ in 0..seg_len {
        let source = side[rng.random_range(0..side.len())].note;
        onset += sample_ioi(rng);
        fresh.push(Tagged {
            note: Note::new(onset, source.pitch, source.duration, source.velocity),
            origin: None,
        });
    }
    let total = onset - start_onset;
    for t in side[pos..].iter_mut() {
        t.note.onset += total;
    }
    side.extend(fresh);
    sort_tagged(side);
}

/// Sort tagged notes into a sequence and report, for every original index,
/// its new position.
fn positions(mut tagged: Vec<Tagged>, source: &NoteSequence) -> Result<(NoteSequence, Vec<usize>)> {
    sort_tagged(&mut tagged);
    let mut map = vec![usize::MAX; source.len()];
    for (j, t) in tagged.iter().enumerate() {
        if let Some(i) = t.origin {
            map[i] = j;
        }
    }
    let seq = NoteSequence::new(
        tagged.into_iter().map(|t| t.note).collect(),
        source.source_path.clone(),
        source.original_ppq,
    )?;
    Ok((seq, map))
}
