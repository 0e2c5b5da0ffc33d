//! Dual cross-entropy over the similarity matrix, plus the decoder-head CE.
//!
//! Row 0 / column 0 of the similarity matrix are the default notes: they are
//! valid *targets* (meaning "unmatched") but contribute no loss terms of
//! their own.

use ndarray::Array2;

use super::layers::Real;
use crate::alignment::AlignmentPair;
use crate::error::{Error, Result};

/// Per-note target matrix indices (0 = default) for both loss directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Targets {
    /// For each real s1 note (matrix rows 1..n1): the matching s2 column.
    pub row_target: Vec<usize>,
    /// For each real s2 note (matrix columns 1..n2): the matching s1 row.
    pub col_target: Vec<usize>,
}

/// Translate an alignment into loss targets for a window whose matrix is
/// `n1 x n2` (sides include the default note at index 0).
pub fn targets_from_truth(truth: &[AlignmentPair], n1: usize, n2: usize) -> Result<Targets> {
    let mut row_target = vec![0usize; n1 - 1];
    let mut col_target = vec![0usize; n2 - 1];
    for pair in truth {
        if let Some(i) = pair.idx1.note() {
            if i + 1 >= n1 {
                return Err(Error::validation(format!(
                    "truth s1 index {i} outside window of {} real notes",
                    n1 - 1
                )));
            }
            row_target[i] = pair.idx2.matrix_index();
        }
        if let Some(j) = pair.idx2.note() {
            if j + 1 >= n2 {
                return Err(Error::validation(format!(
                    "truth s2 index {j} outside window of {} real notes",
                    n2 - 1
                )));
            }
            col_target[j] = pair.idx1.matrix_index();
        }
    }
    Ok(Targets {
        row_target,
        col_target,
    })
}

/// Stable log-softmax helper: returns (log-probabilities, probabilities).
fn log_softmax<F: Real>(logits: &[F]) -> (Vec<F>, Vec<F>) {
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut exps: Vec<F> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: F = exps.iter().cloned().fold(F::zero(), |a, b| a + b);
    let log_sum = sum.ln() + max;
    let logp: Vec<F> = logits.iter().map(|&v| v - log_sum).collect();
    for e in exps.iter_mut() {
        *e = *e / sum;
    }
    (logp, exps)
}

/// Mean CE of the column-softmax over real s2 notes plus mean CE of the
/// row-softmax over real s1 notes.
pub fn dual_ce_loss<F: Real>(sim: &Array2<F>, truth: &[AlignmentPair]) -> Result<F> {
    let (n1, n2) = sim.dim();
    let targets = targets_from_truth(truth, n1, n2)?;
    Ok(dual_ce_loss_grad(sim, &targets).0)
}

/// Loss value and its gradient with respect to the similarity matrix.
pub fn dual_ce_loss_grad<F: Real>(sim: &Array2<F>, targets: &Targets) -> (F, Array2<F>) {
    let (n1, n2) = sim.dim();
    assert_eq!(targets.row_target.len(), n1 - 1, "row target count");
    assert_eq!(targets.col_target.len(), n2 - 1, "column target count");
    let mut grad = Array2::zeros((n1, n2));
    let mut loss = F::zero();

    if n2 > 1 {
        let scale = F::c(1.0 / (n2 - 1) as f64);
        for j in 1..n2 {
            let column: Vec<F> = (0..n1).map(|i| sim[[i, j]]).collect();
            let (logp, p) = log_softmax(&column);
            let target = targets.col_target[j - 1];
            loss = loss - logp[target] * scale;
            for i in 0..n1 {
                let indicator = if i == target { F::one() } else { F::zero() };
                grad[[i, j]] = grad[[i, j]] + (p[i] - indicator) * scale;
            }
        }
    }
    if n1 > 1 {
        let scale = F::c(1.0 / (n1 - 1) as f64);
        for i in 1..n1 {
            let row: Vec<F> = (0..n2).map(|j| sim[[i, j]]).collect();
            let (logp, p) = log_softmax(&row);
            let target = targets.row_target[i - 1];
            loss = loss - logp[target] * scale;
            for j in 0..n2 {
                let indicator = if j == target { F::one() } else { F::zero() };
                grad[[i, j]] = grad[[i, j]] + (p[j] - indicator) * scale;
            }
        }
    }
    (loss, grad)
}

/// Mean CE of the decoder-head logits (one row per real s2 note) against the
/// matching s1 matrix index; returns the gradient as well.
pub fn head_ce_loss<F: Real>(logits: &Array2<F>, col_target: &[usize]) -> (F, Array2<F>) {
    let (rows, n1) = logits.dim();
    assert_eq!(col_target.len(), rows, "head target count");
    let mut grad = Array2::zeros((rows, n1));
    let mut loss = F::zero();
    if rows == 0 {
        return (loss, grad);
    }
    let scale = F::c(1.0 / rows as f64);
    for r in 0..rows {
        let row: Vec<F> = logits.row(r).to_vec();
        let (logp, p) = log_softmax(&row);
        let target = col_target[r];
        loss = loss - logp[target] * scale;
        for j in 0..n1 {
            let indicator = if j == target { F::one() } else { F::zero() };
            grad[[r, j]] = (p[j] - indicator) * scale;
        }
    }
    (loss, grad)
}

/// Fraction of real notes (both directions pooled) whose row/column argmax
/// hits the target.
pub fn argmax_accuracy<F: Real>(sim: &Array2<F>, targets: &Targets) -> f64 {
    let (n1, n2) = sim.dim();
    let mut correct = 0usize;
    let mut total = 0usize;
    for j in 1..n2 {
        let mut best = 0usize;
        for i in 1..n1 {
            if sim[[i, j]] > sim[[best, j]] {
                best = i;
            }
        }
        total += 1;
        if best == targets.col_target[j - 1] {
            correct += 1;
        }
    }
    for i in 1..n1 {
        let mut best = 0usize;
        for j in 1..n2 {
            if sim[[i, j]] > sim[[i, best]] {
                best = j;
            }
        }
        total += 1;
        if best == targets.row_target[i - 1] {
            correct += 1;
        }
    }
    if total == 0 {
        return 1.0;
    }
    correct as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::MAX_BLOCKS;

    fn identity_truth(n: usize) -> Vec<AlignmentPair> {
        (0..n).map(|i| AlignmentPair::matched(i, i)).collect()
    }

    #[test]
    fn uniform_similarity_gives_two_ln_513() {
        let sim = Array2::<f64>::zeros((MAX_BLOCKS, MAX_BLOCKS));
        let truth = identity_truth(MAX_BLOCKS - 1);
        let loss = dual_ce_loss(&sim, &truth).unwrap();
        assert!((loss - 2.0 * (MAX_BLOCKS as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn one_hot_similarity_drives_loss_to_zero() {
        let n = 6;
        let mut sim = Array2::<f64>::zeros((n, n));
        for i in 1..n {
            sim[[i, i]] = 1e4;
        }
        let truth = identity_truth(n - 1);
        let loss = dual_ce_loss(&sim, &truth).unwrap();
        assert!(loss < 1e-6);
        let targets = targets_from_truth(&truth, n, n).unwrap();
        assert_eq!(argmax_accuracy(&sim, &targets), 1.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let n1 = 6;
        let n2 = 5;
        let mut sim = Array2::<f64>::zeros((n1, n2));
        for i in 0..n1 {
            for j in 0..n2 {
                sim[[i, j]] = ((i * 31 + j * 17) % 13) as f64 / 7.0 - 0.9;
            }
        }
        // s1 has 5 real notes, s2 has 4.
        let truth = vec![
            AlignmentPair::matched(0, 2),
            AlignmentPair::matched(2, 0),
            AlignmentPair::matched(4, 3),
            AlignmentPair::unmatched_s1(1),
            AlignmentPair::unmatched_s1(3),
            AlignmentPair::unmatched_s2(1),
        ];
        let targets = targets_from_truth(&truth, n1, n2).unwrap();
        let (_, grad) = dual_ce_loss_grad(&sim, &targets);
        let eps = 1e-6;
        for i in 0..n1 {
            for j in 0..n2 {
                let mut plus = sim.clone();
                plus[[i, j]] += eps;
                let mut minus = sim.clone();
                minus[[i, j]] -= eps;
                let numeric = (dual_ce_loss_grad(&plus, &targets).0
                    - dual_ce_loss_grad(&minus, &targets).0)
                    / (2.0 * eps);
                let denom = numeric.abs().max(grad[[i, j]].abs()).max(1e-8);
                assert!(
                    ((grad[[i, j]] - numeric) / denom).abs() < 1e-5,
                    "cell ({i}, {j}): analytic {} vs numeric {numeric}",
                    grad[[i, j]]
                );
            }
        }
    }

    #[test]
    fn head_ce_uniform_is_ln_513() {
        let logits = Array2::<f64>::zeros((MAX_BLOCKS - 1, MAX_BLOCKS));
        let targets = vec![0usize; MAX_BLOCKS - 1];
        let (loss, grad) = head_ce_loss(&logits, &targets);
        assert!((loss - (MAX_BLOCKS as f64).ln()).abs() < 1e-9);
        assert_eq!(grad.dim(), (MAX_BLOCKS - 1, MAX_BLOCKS));
    }

    #[test]
    fn out_of_window_truth_is_rejected() {
        let truth = vec![AlignmentPair::matched(10, 0)];
        assert!(targets_from_truth(&truth, 6, 6).is_err());
    }
}
