//! Turn a similarity matrix (plus note sequences) into one-to-one note
//! matches: greedy selection, decoder-head classification, or weighted DTW
//! followed by pitch-separated refinement.

use ndarray::{s, Array2, ArrayView2};

use crate::alignment::{check_pairs, AlignmentPair};
use crate::error::{Error, Result};
use crate::model::Real;
use crate::note::NoteSequence;

/// Monotone path through a cost matrix from (0, 0) to (rows-1, cols-1) with
/// steps from {(0,1), (1,1), (1,0)}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarpingPath {
    pub steps: Vec<(usize, usize)>,
}

impl WarpingPath {
    /// Check the boundary and step-delta invariants against a matrix shape.
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        let first = self.steps.first().ok_or_else(|| Error::validation("empty warping path"))?;
        let last = self.steps.last().unwrap();
        if *first != (0, 0) || *last != (rows - 1, cols - 1) {
            return Err(Error::validation(format!(
                "path runs {first:?}..{last:?}, expected (0, 0)..({}, {})",
                rows - 1,
                cols - 1
            )));
        }
        for w in self.steps.windows(2) {
            let di = w[1].0 as i64 - w[0].0 as i64;
            let dj = w[1].1 as i64 - w[0].1 as i64;
            if !matches!((di, dj), (0, 1) | (1, 1) | (1, 0)) {
                return Err(Error::validation(format!(
                    "illegal step {:?} -> {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }
}

/// Piecewise-linear map from s1 onset ticks to s2 onset ticks, clamped
/// outside the knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMapping {
    /// Strictly increasing in the first coordinate.
    pub knots: Vec<(f64, f64)>,
}

impl TimeMapping {
    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        debug_assert!(!k.is_empty(), "mapping has no knots");
        if t <= k[0].0 {
            return k[0].1;
        }
        if t >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        // First knot strictly right of t; t lies in [hi-1, hi).
        let hi = k.partition_point(|&(t1, _)| t1 <= t);
        let (x0, y0) = k[hi - 1];
        let (x1, y1) = k[hi];
        y0 + (t - x0) / (x1 - x0) * (y1 - y0)
    }
}

/// Final one-to-one matching: every real note of both sequences appears
/// exactly once, possibly paired with the default (= unmatched).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchPrediction {
    pub pairs: Vec<AlignmentPair>,
    /// Name of the extractor that produced it.
    pub provenance: String,
}

impl MatchPrediction {
    /// Check the one-assignment-per-note invariant: each of the `n1` s1 notes
    /// and `n2` s2 notes appears exactly once.
    pub fn validate(&self, n1: usize, n2: usize) -> Result<()> {
        check_pairs(&self.pairs)?;
        let mut seen1 = 0usize;
        let mut seen2 = 0usize;
        for p in &self.pairs {
            if let Some(i) = p.idx1.note() {
                if i >= n1 {
                    return Err(Error::validation(format!("s1 index {i} out of range")));
                }
                seen1 += 1;
            }
            if let Some(j) = p.idx2.note() {
                if j >= n2 {
                    return Err(Error::validation(format!("s2 index {j} out of range")));
                }
                seen2 += 1;
            }
        }
        if seen1 != n1 || seen2 != n2 {
            return Err(Error::validation(format!(
                "prediction covers {seen1}/{n1} s1 notes and {seen2}/{n2} s2 notes"
            )));
        }
        Ok(())
    }
}

/// Conflict housekeeping shared by the greedy and head extractors.
///
/// `scores[(j, i)]` is the affinity of real s2 note `j` for s1 class `i`
/// (0 = default). Notes are processed in descending order of their best
/// score; each takes its argmax among still-unclaimed classes, with the
/// default always available and ties broken toward the lowest index.
fn assign_by_scores<F: Real>(scores: ArrayView2<'_, F>) -> Vec<usize> {
    let (n2, classes) = scores.dim();
    let best: Vec<F> = (0..n2)
        .map(|j| scores.row(j).iter().cloned().fold(F::neg_infinity(), F::max))
        .collect();
    let mut order: Vec<usize> = (0..n2).collect();
    order.sort_by(|&a, &b| {
        best[b]
            .partial_cmp(&best[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut claimed = vec![false; classes];
    let mut assign = vec![0usize; n2];
    for &j in &order {
        let mut pick = 0usize;
        let mut pick_score = scores[[j, 0]];
        for i in 1..classes {
            if claimed[i] {
                continue;
            }
            let sc = scores[[j, i]];
            if sc > pick_score {
                pick = i;
                pick_score = sc;
            }
        }
        assign[j] = pick;
        if pick != 0 {
            claimed[pick] = true;
        }
    }
    assign
}

/// Build the prediction from per-s2-note class assignments (0 = default):
/// s1 notes in ascending order, then unmatched s2 notes.
fn finalize_assignment(assign: &[usize], n1_real: usize, provenance: &str) -> MatchPrediction {
    let mut partner = vec![None; n1_real];
    for (j, &a) in assign.iter().enumerate() {
        if a > 0 {
            partner[a - 1] = Some(j);
        }
    }
    let mut pairs = Vec::with_capacity(n1_real + assign.len());
    for (i, p) in partner.iter().enumerate() {
        pairs.push(match p {
            Some(j) => AlignmentPair::matched(i, *j),
            None => AlignmentPair::unmatched_s1(i),
        });
    }
    for (j, &a) in assign.iter().enumerate() {
        if a == 0 {
            pairs.push(AlignmentPair::unmatched_s2(j));
        }
    }
    MatchPrediction {
        pairs,
        provenance: provenance.into(),
    }
}

/// Greedy extraction over a similarity matrix whose row/column 0 are the
/// default notes.
pub fn greedy_extract<F: Real>(sim: &Array2<F>) -> MatchPrediction {
    let (n1p1, n2p1) = sim.dim();
    if n1p1 == 0 || n2p1 == 0 {
        return MatchPrediction {
            pairs: Vec::new(),
            provenance: "greedy".into(),
        };
    }
    // Per-s2-note scores over s1 classes: similarity columns, transposed.
    let scores = sim.slice(s![.., 1..]).reversed_axes();
    let assign = assign_by_scores(scores);
    finalize_assignment(&assign, n1p1 - 1, "greedy")
}

/// Extraction from decoder-head logits: one row per real s2 note, one column
/// per s1 class (0 = unmatched), then the same housekeeping as greedy.
pub fn head_extract<F: Real>(logits: &Array2<F>) -> MatchPrediction {
    let (_, classes) = logits.dim();
    let assign = assign_by_scores(logits.view());
    finalize_assignment(&assign, classes.saturating_sub(1), "head")
}

/// Accumulate and backtrack; `diag_weight` is 2 for the weighted variant and
/// 1 for the plain one (horizontal/vertical steps always weigh 1). Consumes
/// the cost matrix as the accumulator.
fn dtw_core(mut acc: Array2<f64>, diag_weight: f64) -> Result<(WarpingPath, f64)> {
    let (rows, cols) = acc.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::validation("empty cost matrix"));
    }
    // 0 = diagonal, 1 = vertical, 2 = horizontal predecessor.
    let mut back = Array2::<u8>::zeros((rows, cols));
    for j in 1..cols {
        acc[[0, j]] += acc[[0, j - 1]];
        back[[0, j]] = 2;
    }
    for i in 1..rows {
        acc[[i, 0]] += acc[[i - 1, 0]];
        back[[i, 0]] = 1;
    }
    for i in 1..rows {
        for j in 1..cols {
            let c = acc[[i, j]];
            let mut bestv = acc[[i - 1, j - 1]] + diag_weight * c;
            let mut dir = 0u8;
            let vert = acc[[i - 1, j]] + c;
            if vert < bestv {
                bestv = vert;
                dir = 1;
            }
            let horiz = acc[[i, j - 1]] + c;
            if horiz < bestv {
                bestv = horiz;
                dir = 2;
            }
            acc[[i, j]] = bestv;
            back[[i, j]] = dir;
        }
    }
    let total = acc[[rows - 1, cols - 1]];
    let mut steps = Vec::new();
    let (mut i, mut j) = (rows - 1, cols - 1);
    loop {
        steps.push((i, j));
        if i == 0 && j == 0 {
            break;
        }
        match back[[i, j]] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            _ => j -= 1,
        }
    }
    steps.reverse();
    Ok((WarpingPath { steps }, total))
}

/// Minimal-cost monotone path under step weights 1 (horizontal), 2
/// (diagonal), 1 (vertical): D(i,j) = w·cost(i,j) + min over predecessors,
/// D(0,0) = cost(0,0). Ties backtrack diagonal first, then vertical.
pub fn weighted_dtw_path(cost: Array2<f64>) -> Result<(WarpingPath, f64)> {
    dtw_core(cost, 2.0)
}

/// Cost over the real-note submatrix: max(sim) − sim. The default row and
/// column take no part in DTW.
pub fn similarity_to_cost(sim: &Array2<f32>) -> Array2<f64> {
    let (n1p1, n2p1) = sim.dim();
    let rows = n1p1.saturating_sub(1);
    let cols = n2p1.saturating_sub(1);
    let real = sim.slice(s![n1p1 - rows.., n2p1 - cols..]);
    let max = real.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut cost = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            cost[[i, j]] = max - real[[i, j]] as f64;
        }
    }
    cost
}

/// Interpolate the coarse path into a total onset-time mapping; path steps
/// index real notes. Steps sharing an s1 onset merge into one knot whose s2
/// onset is their mean.
pub fn path_to_mapping(
    path: &WarpingPath,
    s1: &NoteSequence,
    s2: &NoteSequence,
) -> Result<TimeMapping> {
    if path.steps.is_empty() {
        return Err(Error::validation("empty warping path"));
    }
    let notes1 = s1.notes();
    let notes2 = s2.notes();
    let mut knots: Vec<(f64, f64)> = Vec::new();
    for &(i, j) in &path.steps {
        if i >= notes1.len() || j >= notes2.len() {
            return Err(Error::validation(format!(
                "path step ({i}, {j}) out of range for {} x {} notes",
                notes1.len(),
                notes2.len()
            )));
        }
        knots.push((notes1[i].onset as f64, notes2[j].onset as f64));
    }
    // The path is monotone in i and s1 is onset-sorted, so equal-t1 runs are
    // contiguous; merge each run by averaging t2.
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut k = 0;
    while k < knots.len() {
        let t1 = knots[k].0;
        let mut sum = 0.0;
        let mut count = 0.0;
        while k < knots.len() && knots[k].0 == t1 {
            sum += knots[k].1;
            count += 1.0;
            k += 1;
        }
        merged.push((t1, sum / count));
    }
    Ok(TimeMapping { knots: merged })
}

/// Re-match notes pitch by pitch. Seeds come from base-path steps that are
/// one-to-one on both indices and pitch-equal; then, for each pitch present
/// in both sequences (ascending), a plain DTW over (mapped s1 onsets) vs
/// (s2 onsets) with absolute-difference cost contributes its one-to-one
/// steps as matches, overwriting previous assignments at note granularity.
/// Notes of a pitch present in only one sequence stay unmatched.
pub fn pitch_separated_refine(
    s1: &NoteSequence,
    s2: &NoteSequence,
    mapping: &TimeMapping,
    base_path: &WarpingPath,
) -> Result<MatchPrediction> {
    let notes1 = s1.notes();
    let notes2 = s2.notes();
    let mut by_pitch1: Vec<Vec<usize>> = vec![Vec::new(); 128];
    let mut by_pitch2: Vec<Vec<usize>> = vec![Vec::new(); 128];
    for (i, n) in notes1.iter().enumerate() {
        by_pitch1[n.pitch as usize].push(i);
    }
    for (j, n) in notes2.iter().enumerate() {
        by_pitch2[n.pitch as usize].push(j);
    }

    let mut count1 = vec![0usize; notes1.len()];
    let mut count2 = vec![0usize; notes2.len()];
    for &(i, j) in &base_path.steps {
        if i >= notes1.len() || j >= notes2.len() {
            return Err(Error::validation(format!(
                "path step ({i}, {j}) out of range for {} x {} notes",
                notes1.len(),
                notes2.len()
            )));
        }
        count1[i] += 1;
        count2[j] += 1;
    }
    let mut a1: Vec<Option<usize>> = vec![None; notes1.len()];
    let mut a2: Vec<Option<usize>> = vec![None; notes2.len()];
    for &(i, j) in &base_path.steps {
        if count1[i] == 1 && count2[j] == 1 && notes1[i].pitch == notes2[j].pitch {
            a1[i] = Some(j);
            a2[j] = Some(i);
        }
    }

    for p in 0..128 {
        let idx1 = &by_pitch1[p];
        let idx2 = &by_pitch2[p];
        if idx1.is_empty() || idx2.is_empty() {
            continue;
        }
        let mut cost = Array2::zeros((idx1.len(), idx2.len()));
        for (a, &i) in idx1.iter().enumerate() {
            let t = mapping.eval(notes1[i].onset as f64);
            for (b, &j) in idx2.iter().enumerate() {
                cost[[a, b]] = (t - notes2[j].onset as f64).abs();
            }
        }
        let (path, _) = dtw_core(cost, 1.0)?;
        let mut ca = vec![0usize; idx1.len()];
        let mut cb = vec![0usize; idx2.len()];
        for &(a, b) in &path.steps {
            ca[a] += 1;
            cb[b] += 1;
        }
        for &(a, b) in &path.steps {
            if ca[a] != 1 || cb[b] != 1 {
                continue;
            }
            let i = idx1[a];
            let j = idx2[b];
            if let Some(prev) = a1[i].replace(j) {
                if prev != j {
                    a2[prev] = None;
                }
            }
            if let Some(prev) = a2[j].replace(i) {
                if prev != i {
                    a1[prev] = None;
                }
            }
        }
    }

    let mut pairs = Vec::with_capacity(notes1.len() + notes2.len());
    for (i, p) in a1.iter().enumerate() {
        pairs.push(match p {
            Some(j) => AlignmentPair::matched(i, *j),
            None => AlignmentPair::unmatched_s1(i),
        });
    }
    for (j, p) in a2.iter().enumerate() {
        if p.is_none() {
            pairs.push(AlignmentPair::unmatched_s2(j));
        }
    }
    Ok(MatchPrediction {
        pairs,
        provenance: "dtw".into(),
    })
}

/// The full DTW route: cost transform, weighted coarse path, onset mapping,
/// pitch-separated refinement.
pub fn dtw_extract(
    global_sim: &Array2<f32>,
    s1: &NoteSequence,
    s2: &NoteSequence,
) -> Result<MatchPrediction> {
    let expected = (s1.len() + 1, s2.len() + 1);
    if global_sim.dim() != expected {
        return Err(Error::Shape(format!(
            "similarity has shape {:?}, expected {expected:?}",
            global_sim.dim()
        )));
    }
    let cost = similarity_to_cost(global_sim);
    let (path, _) = weighted_dtw_path(cost)?;
    let mapping = path_to_mapping(&path, s1, s2)?;
    pitch_separated_refine(s1, s2, &mapping, &path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::note::Note;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn real_pairs(pred: &MatchPrediction) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = pred.pairs.iter().filter_map(|p| p.real_pair()).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn greedy_picks_a_dominant_diagonal() {
        let mut sim = Array2::<f64>::zeros((4, 4));
        for i in 1..4 {
            sim[[i, i]] = 5.0;
        }
        let pred = greedy_extract(&sim);
        pred.validate(3, 3).unwrap();
        assert_eq!(real_pairs(&pred), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn greedy_conflict_goes_to_the_higher_similarity_note() {
        // Both s2 notes prefer s1 note 1; the second s2 note scores higher,
        // so it wins and the first falls back to its next-best (note 2).
        let sim = array![
            [0.0, 0.0, 0.0],
            [0.0, 3.0, 4.0],
            [0.0, 2.0, 1.0],
        ];
        let pred = greedy_extract(&sim);
        pred.validate(2, 2).unwrap();
        assert_eq!(real_pairs(&pred), vec![(0, 1), (1, 0)]);
    }

    /// Literal re-implementation of the greedy rule with different data
    /// structures, as an oracle.
    fn greedy_oracle(sim: &Array2<f64>) -> Vec<(usize, usize)> {
        let (n1p1, n2p1) = sim.dim();
        let best = |j: usize| (0..n1p1).map(|i| sim[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
        let mut order: Vec<usize> = (1..n2p1).collect();
        order.sort_by(|&a, &b| best(b).partial_cmp(&best(a)).unwrap().then(a.cmp(&b)));
        let mut unclaimed: std::collections::BTreeSet<usize> = (1..n1p1).collect();
        let mut out = Vec::new();
        for j in order {
            let mut pick = 0usize;
            for &i in &unclaimed {
                if sim[[i, j]] > sim[[pick, j]] {
                    pick = i;
                }
            }
            if pick != 0 {
                unclaimed.remove(&pick);
                out.push((pick - 1, j - 1));
            }
        }
        out.sort_unstable();
        out
    }

    #[test]
    fn greedy_matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..200 {
            let sim = Array2::<f64>::from_shape_fn((10, 10), |_| rng.random_range(-2.0..2.0));
            let pred = greedy_extract(&sim);
            pred.validate(9, 9).unwrap();
            assert_eq!(real_pairs(&pred), greedy_oracle(&sim));
        }
    }

    #[test]
    fn head_one_hot_recovers_the_alignment() {
        // 3 s2 notes over 4 classes: note 0 -> s1 note 1, note 1 unmatched,
        // note 2 -> s1 note 0.
        let mut logits = Array2::<f64>::zeros((3, 4));
        logits[[0, 2]] = 9.0;
        logits[[1, 0]] = 9.0;
        logits[[2, 1]] = 9.0;
        let pred = head_extract(&logits);
        pred.validate(3, 3).unwrap();
        assert_eq!(real_pairs(&pred), vec![(0, 2), (1, 0)]);
    }

    #[test]
    fn head_all_equal_logits_leave_everything_unmatched() {
        let logits = Array2::<f64>::zeros((3, 4));
        let pred = head_extract(&logits);
        pred.validate(3, 3).unwrap();
        assert!(real_pairs(&pred).is_empty());
        assert_eq!(pred.pairs.len(), 6);
    }

    #[test]
    fn dtw_single_row_takes_the_horizontal_path() {
        let cost = array![[1.0, 2.0, 3.0]];
        let (path, total) = weighted_dtw_path(cost).unwrap();
        assert_eq!(path.steps, vec![(0, 0), (0, 1), (0, 2)]);
        assert_eq!(total, 6.0);
    }

    #[test]
    fn dtw_prefers_the_cheap_diagonal() {
        let cost = array![[1.0, 9.0], [9.0, 1.0]];
        let (path, total) = weighted_dtw_path(cost).unwrap();
        assert_eq!(path.steps, vec![(0, 0), (1, 1)]);
        assert_eq!(total, 1.0 + 2.0 * 1.0);
    }

    #[test]
    fn constant_cost_totals_are_path_independent() {
        for (rows, cols) in [(1, 1), (2, 5), (4, 4), (5, 3)] {
            let c = 1.75;
            let cost = Array2::from_elem((rows, cols), c);
            let (path, total) = weighted_dtw_path(cost).unwrap();
            path.validate(rows, cols).unwrap();
            assert!((total - c * (rows + cols - 1) as f64).abs() < 1e-12);
        }
    }

    /// Every monotone path and its weighted cost, by brute force.
    fn enumerate_paths(cost: &Array2<f64>) -> Vec<f64> {
        let (rows, cols) = cost.dim();
        let mut done = Vec::new();
        let mut stack = vec![(0usize, 0usize, cost[[0, 0]])];
        while let Some((i, j, acc)) = stack.pop() {
            if i == rows - 1 && j == cols - 1 {
                done.push(acc);
                continue;
            }
            if i + 1 < rows && j + 1 < cols {
                stack.push((i + 1, j + 1, acc + 2.0 * cost[[i + 1, j + 1]]));
            }
            if i + 1 < rows {
                stack.push((i + 1, j, acc + cost[[i + 1, j]]));
            }
            if j + 1 < cols {
                stack.push((i, j + 1, acc + cost[[i, j + 1]]));
            }
        }
        done
    }

    #[test]
    fn dtw_cost_is_optimal_against_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let rows = rng.random_range(1..=4);
            let cols = rng.random_range(1..=4);
            let cost = Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..5.0));
            let (path, total) = weighted_dtw_path(cost.clone()).unwrap();
            path.validate(rows, cols).unwrap();
            let minimum = enumerate_paths(&cost)
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            assert_eq!(total, minimum);
        }
    }

    #[test]
    fn cost_transform_inverts_similarity_order() {
        let sim = array![
            [0.0f32, 0.0, 0.0, 0.0],
            [0.0, 1.0, 4.0, 2.0],
            [0.0, 3.0, 0.5, 2.5],
        ];
        let cost = similarity_to_cost(&sim);
        assert_eq!(cost.dim(), (2, 3));
        // max over the real cells is 4.
        assert_eq!(cost[[0, 0]], 3.0);
        assert_eq!(cost[[0, 1]], 0.0);
        assert_eq!(cost[[1, 2]], 1.5);
        for i in 0..2 {
            let argmax_sim = (0..3)
                .max_by(|&a, &b| sim[[i + 1, a + 1]].partial_cmp(&sim[[i + 1, b + 1]]).unwrap());
            let argmin_cost =
                (0..3).min_by(|&a, &b| cost[[i, a]].partial_cmp(&cost[[i, b]]).unwrap());
            assert_eq!(argmax_sim, argmin_cost);
        }
    }

    #[test]
    fn constant_similarity_gives_zero_cost() {
        let sim = Array2::<f32>::from_elem((3, 3), 0.7);
        let cost = similarity_to_cost(&sim);
        assert!(cost.iter().all(|&c| c == 0.0));
    }

    fn seq_with_onsets(onsets: &[u32], pitch: u8) -> NoteSequence {
        let notes = onsets.iter().map(|&t| Note::new(t, pitch, 100, 64)).collect();
        NoteSequence::from_notes(notes).unwrap()
    }

    #[test]
    fn mapping_interpolates_and_clamps() {
        let s1 = seq_with_onsets(&[0, 480], 60);
        let s2 = seq_with_onsets(&[0, 960], 60);
        let path = WarpingPath {
            steps: vec![(0, 0), (1, 1)],
        };
        let m = path_to_mapping(&path, &s1, &s2).unwrap();
        assert_eq!(m.eval(240.0), 480.0);
        assert_eq!(m.eval(-100.0), 0.0);
        assert_eq!(m.eval(5000.0), 960.0);
    }

    #[test]
    fn equal_s1_onsets_merge_into_an_averaged_knot() {
        // A chord in s1 spread over two s2 notes.
        let s1 = seq_with_onsets(&[0, 0, 480], 60);
        let s2 = seq_with_onsets(&[100, 300, 960], 60);
        let path = WarpingPath {
            steps: vec![(0, 0), (1, 1), (2, 2)],
        };
        let m = path_to_mapping(&path, &s1, &s2).unwrap();
        assert_eq!(m.knots, vec![(0.0, 200.0), (480.0, 960.0)]);
    }

    #[test]
    fn empty_path_is_rejected() {
        let s1 = seq_with_onsets(&[0], 60);
        let path = WarpingPath { steps: vec![] };
        assert!(path_to_mapping(&path, &s1, &s1).is_err());
        assert!(weighted_dtw_path(Array2::zeros((0, 3))).is_err());
    }

    fn melody(n: usize) -> NoteSequence {
        let notes = (0..n)
            .map(|i| Note::new(i as u32 * 240, 60 + (i % 5) as u8, 200, 64))
            .collect();
        NoteSequence::from_notes(notes).unwrap()
    }

    #[test]
    fn refine_on_identical_sequences_is_perfect() {
        let seq = melody(12);
        let path = WarpingPath {
            steps: (0..12).map(|i| (i, i)).collect(),
        };
        let mapping = path_to_mapping(&path, &seq, &seq).unwrap();
        let pred = pitch_separated_refine(&seq, &seq, &mapping, &path).unwrap();
        pred.validate(12, 12).unwrap();
        assert_eq!(real_pairs(&pred), (0..12).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn pitch_only_in_s2_goes_unmatched() {
        let s1 = seq_with_onsets(&[0, 240, 480], 60);
        let mut notes = vec![
            Note::new(0, 60, 100, 64),
            Note::new(120, 99, 100, 64), // pitch 99 absent from s1
            Note::new(240, 60, 100, 64),
            Note::new(480, 60, 100, 64),
        ];
        notes.sort_by_key(|n| n.onset);
        let s2 = NoteSequence::from_notes(notes).unwrap();
        let path = WarpingPath {
            steps: vec![(0, 0), (0, 1), (1, 2), (2, 3)],
        };
        let mapping = path_to_mapping(&path, &s1, &s2).unwrap();
        let pred = pitch_separated_refine(&s1, &s2, &mapping, &path).unwrap();
        pred.validate(3, 4).unwrap();
        let pairs = real_pairs(&pred);
        assert!(pairs.iter().all(|&(_, j)| j != 1), "pitch-99 note matched");
        assert_eq!(pairs, vec![(0, 0), (1, 2), (2, 3)]);
    }

    #[test]
    fn dtw_extract_recovers_an_identity_alignment() {
        let seq = melody(8);
        let mut sim = Array2::<f32>::zeros((9, 9));
        for i in 1..9 {
            sim[[i, i]] = 10.0;
        }
        let pred = dtw_extract(&sim, &seq, &seq).unwrap();
        pred.validate(8, 8).unwrap();
        assert_eq!(real_pairs(&pred), (0..8).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn dtw_extract_random_similarity_keeps_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let n1 = rng.random_range(2..10);
            let n2 = rng.random_range(2..10);
            let s1 = melody(n1);
            let s2 = melody(n2);
            let sim =
                Array2::from_shape_fn((n1 + 1, n2 + 1), |_| rng.random_range(-1.0f32..1.0));
            let pred = dtw_extract(&sim, &s1, &s2).unwrap();
            pred.validate(n1, n2).unwrap();
        }
    }

    #[test]
    fn affine_similarity_rescaling_keeps_the_coarse_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let n1 = rng.random_range(2..=6);
            let n2 = rng.random_range(2..=6);
            let sim =
                Array2::from_shape_fn((n1 + 1, n2 + 1), |_| rng.random_range(-1.0f32..1.0));
            let scaled = sim.mapv(|v| 2.0 * v + 0.5);
            let (path, _) = weighted_dtw_path(similarity_to_cost(&sim)).unwrap();
            let (path2, _) = weighted_dtw_path(similarity_to_cost(&scaled)).unwrap();
            assert_eq!(path.steps, path2.steps);
        }
    }
}
