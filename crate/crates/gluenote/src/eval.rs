//! Precision/recall/F scoring of predictions against ground truth, the
//! training-free pitch-onset baseline similarity, and corpus-level reports.

use std::collections::HashSet;
use std::fmt::Write as _;

use ndarray::Array2;

use crate::alignment::AlignmentPair;
use crate::error::{Error, Result};
use crate::extract::MatchPrediction;
use crate::note::NoteSequence;

pub const BASELINE_ALPHA: f64 = 1.0;
pub const BASELINE_BETA: f64 = 1.0;

/// Note-match precision, recall, and F-score with their underlying counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchScore {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl MatchScore {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> MatchScore {
        let rate = |num: usize, denom: usize| {
            if denom == 0 {
                0.0
            } else {
                num as f64 / denom as f64
            }
        };
        let precision = rate(tp, tp + fp);
        let recall = rate(tp, tp + fn_);
        let f_score = if precision > 0.0 && recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        MatchScore {
            precision,
            recall,
            f_score,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
        }
    }
}

fn covered_indices(pairs: &[AlignmentPair]) -> (Vec<usize>, Vec<usize>) {
    let mut c1: Vec<usize> = pairs.iter().filter_map(|p| p.idx1.note()).collect();
    let mut c2: Vec<usize> = pairs.iter().filter_map(|p| p.idx2.note()).collect();
    c1.sort_unstable();
    c2.sort_unstable();
    (c1, c2)
}

/// Score a prediction against ground truth over the same sequence pair.
///
/// A true positive is a predicted real–real pair present in truth; DEFAULT
/// pairs generate no true positives. Predictions and truth must cover the
/// same notes on both sides.
pub fn match_prf(pred: &MatchPrediction, truth: &[AlignmentPair]) -> Result<MatchScore> {
    let (p1, p2) = covered_indices(&pred.pairs);
    let (t1, t2) = covered_indices(truth);
    if p1 != t1 || p2 != t2 {
        return Err(Error::validation(format!(
            "prediction covers {}+{} notes, truth covers {}+{}; not the same sequences",
            p1.len(),
            p2.len(),
            t1.len(),
            t2.len()
        )));
    }
    let truth_real: HashSet<(usize, usize)> = truth.iter().filter_map(|p| p.real_pair()).collect();
    let mut tp = 0usize;
    let mut fp = 0usize;
    for p in &pred.pairs {
        if let Some(pair) = p.real_pair() {
            if truth_real.contains(&pair) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let fn_ = truth_real.len() - tp;
    Ok(MatchScore::from_counts(tp, fp, fn_))
}

/// Baseline similarity with explicit weights: sim(i,j) = −(α·|Δpitch| +
/// β·|Δonset|) with each sequence's onsets normalized to span [0, 1]. The
/// default row/column sit one unit below the worst real similarity.
pub fn pitch_onset_similarity_with(
    s1: &NoteSequence,
    s2: &NoteSequence,
    alpha: f64,
    beta: f64,
) -> Result<Array2<f32>> {
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::validation("cannot align an empty sequence"));
    }
    let normalized = |seq: &NoteSequence| -> Vec<f64> {
        let onsets: Vec<f64> = seq.notes().iter().map(|n| n.onset as f64).collect();
        let min = onsets.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = onsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        onsets
            .iter()
            .map(|&t| if span > 0.0 { (t - min) / span } else { 0.0 })
            .collect()
    };
    let on1 = normalized(s1);
    let on2 = normalized(s2);
    let (n1, n2) = (s1.len(), s2.len());
    let mut sim = Array2::<f32>::zeros((n1 + 1, n2 + 1));
    let mut min_real = f32::INFINITY;
    for (i, a) in s1.notes().iter().enumerate() {
        for (j, b) in s2.notes().iter().enumerate() {
            let dp = (a.pitch as f64 - b.pitch as f64).abs();
            let dt = (on1[i] - on2[j]).abs();
            let v = -(alpha * dp + beta * dt) as f32;
            sim[[i + 1, j + 1]] = v;
            min_real = min_real.min(v);
        }
    }
    let default = min_real - 1.0;
    for i in 0..=n1 {
        sim[[i, 0]] = default;
    }
    for j in 0..=n2 {
        sim[[0, j]] = default;
    }
    Ok(sim)
}

/// [`pitch_onset_similarity_with`] at the default weights α = β = 1.
pub fn pitch_onset_similarity(s1: &NoteSequence, s2: &NoteSequence) -> Result<Array2<f32>> {
    pitch_onset_similarity_with(s1, s2, BASELINE_ALPHA, BASELINE_BETA)
}

/// One scored piece of a corpus run.
#[derive(Debug, Clone)]
pub struct PieceResult {
    pub piece: String,
    pub score: MatchScore,
    /// Wall-clock alignment time, reported alongside the scores.
    pub runtime_seconds: f64,
}

/// Per-piece results plus their unweighted means.
#[derive(Debug, Clone)]
pub struct CorpusReport {
    pub pieces: Vec<PieceResult>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f: f64,
}

/// Score every (prediction, truth) pair and aggregate with unweighted means.
pub fn evaluate_corpus(
    items: &[(String, MatchPrediction, Vec<AlignmentPair>, f64)],
) -> Result<CorpusReport> {
    if items.is_empty() {
        return Err(Error::validation("no pieces to evaluate"));
    }
    let mut pieces = Vec::with_capacity(items.len());
    for (piece, pred, truth, runtime) in items {
        pieces.push(PieceResult {
            piece: piece.clone(),
            score: match_prf(pred, truth)?,
            runtime_seconds: *runtime,
        });
    }
    Ok(CorpusReport::from_pieces(pieces))
}

impl CorpusReport {
    pub fn from_pieces(pieces: Vec<PieceResult>) -> CorpusReport {
        let n = pieces.len().max(1) as f64;
        let mean = |f: fn(&MatchScore) -> f64| pieces.iter().map(|p| f(&p.score)).sum::<f64>() / n;
        CorpusReport {
            mean_precision: mean(|s| s.precision),
            mean_recall: mean(|s| s.recall),
            mean_f: mean(|s| s.f_score),
            pieces,
        }
    }

    /// Human-readable table with a trailing mean row.
    pub fn human_table(&self) -> String {
        let width = self
            .pieces
            .iter()
            .map(|p| p.piece.len())
            .chain(["piece".len()])
            .max()
            .unwrap();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:width$}  {:>7}  {:>7}  {:>7}  {:>9}",
            "piece", "P", "R", "F", "runtime"
        );
        for p in &self.pieces {
            let _ = writeln!(
                out,
                "{:width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>8.2}s",
                p.piece, p.score.precision, p.score.recall, p.score.f_score, p.runtime_seconds
            );
        }
        let _ = writeln!(
            out,
            "{:width$}  {:>7.4}  {:>7.4}  {:>7.4}",
            "mean", self.mean_precision, self.mean_recall, self.mean_f
        );
        out
    }

    /// Tab-separated records `piece P R F runtime-seconds`, one per piece,
    /// with a final `mean` record (mean runtime).
    pub fn records(&self) -> String {
        let mut out = String::new();
        for p in &self.pieces {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
                p.piece, p.score.precision, p.score.recall, p.score.f_score, p.runtime_seconds
            );
        }
        let mean_runtime = self
            .pieces
            .iter()
            .map(|p| p.runtime_seconds)
            .sum::<f64>()
            / self.pieces.len().max(1) as f64;
        let _ = writeln!(
            out,
            "mean\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            self.mean_precision, self.mean_recall, self.mean_f, mean_runtime
        );
        out
    }
}
