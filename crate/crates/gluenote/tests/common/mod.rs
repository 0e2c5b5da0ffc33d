//! Oracles shared by the integration suites: brute-force or from-scratch
//! re-derivations that the fast library implementations are checked against.

use std::collections::HashSet;

use ndarray::Array2;

use gluenote::augment::AugmentedPair;

/// Total weighted cost of every monotone path from the top-left to the
/// bottom-right cell: the path starts on (0,0) at weight 1 and each
/// subsequent cell contributes its cost times the step weight
/// (`diag_weight` diagonally, 1 vertically/horizontally).
pub fn all_path_costs(cost: &Array2<f64>, diag_weight: f64) -> Vec<f64> {
    let (rows, cols) = cost.dim();
    assert!(rows > 0 && cols > 0);
    let mut totals = Vec::new();
    // Depth-first over the three step choices.
    let mut stack = vec![(0usize, 0usize, cost[[0, 0]])];
    while let Some((i, j, total)) = stack.pop() {
        if i == rows - 1 && j == cols - 1 {
            totals.push(total);
            continue;
        }
        if i + 1 < rows && j + 1 < cols {
            stack.push((i + 1, j + 1, total + diag_weight * cost[[i + 1, j + 1]]));
        }
        if i + 1 < rows {
            stack.push((i + 1, j, total + cost[[i + 1, j]]));
        }
        if j + 1 < cols {
            stack.push((i, j + 1, total + cost[[i, j + 1]]));
        }
    }
    totals
}

pub fn min_path_cost(cost: &Array2<f64>, diag_weight: f64) -> f64 {
    all_path_costs(cost, diag_weight)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Nearest-bin quantizer re-derived by linear scan; at an exact midpoint the
/// larger bin wins.
pub fn nearest_bin_oracle(bins: &[u32], value: u32) -> usize {
    let mut best = 0usize;
    let mut best_dist = u64::MAX;
    for (i, &bin) in bins.iter().enumerate() {
        let dist = (bin as i64 - value as i64).unsigned_abs();
        if dist < best_dist || (dist == best_dist && bin as i64 > value as i64) {
            best = i;
            best_dist = dist;
        }
    }
    best
}

/// From-scratch alignment-validity check: exact coverage of both note sets,
/// no duplicated real pair, no (default, default) entry, and pitch equality
/// on every real match. Returns a description of the first violation.
pub fn check_pair_validity(pair: &AugmentedPair) -> Result<(), String> {
    let mut seen1 = HashSet::new();
    let mut seen2 = HashSet::new();
    let mut real = HashSet::new();
    for p in &pair.truth {
        match (p.idx1.note(), p.idx2.note()) {
            (None, None) => return Err("(default, default) pair".into()),
            (i, j) => {
                if let Some(i) = i {
                    if i >= pair.s1.len() || !seen1.insert(i) {
                        return Err(format!("s1 index {i} out of range or repeated"));
                    }
                }
                if let Some(j) = j {
                    if j >= pair.s2.len() || !seen2.insert(j) {
                        return Err(format!("s2 index {j} out of range or repeated"));
                    }
                }
                if let (Some(i), Some(j)) = (i, j) {
                    if !real.insert((i, j)) {
                        return Err(format!("pair ({i}, {j}) repeated"));
                    }
                    let p1 = pair.s1.notes()[i].pitch;
                    let p2 = pair.s2.notes()[j].pitch;
                    if p1 != p2 {
                        return Err(format!("match ({i}, {j}) pitches {p1} vs {p2}"));
                    }
                }
            }
        }
    }
    if seen1.len() != pair.s1.len() {
        return Err(format!(
            "covered {} of {} s1 notes",
            seen1.len(),
            pair.s1.len()
        ));
    }
    if seen2.len() != pair.s2.len() {
        return Err(format!(
            "covered {} of {} s2 notes",
            seen2.len(),
            pair.s2.len()
        ));
    }
    Ok(())
}
