//! Cosine-annealing learning-rate schedule with warm restarts.

use std::f64::consts::PI;

pub const BASE_LR: f64 = 5e-4;
pub const RESTART_INTERVAL: u64 = 2000;

/// Closed-form learning rate at a step: cosine annealing from [`BASE_LR`]
/// to 0 over each restart interval, snapping back at every boundary.
pub fn learning_rate(step: u64) -> f64 {
    learning_rate_with(step, BASE_LR, RESTART_INTERVAL)
}

pub fn learning_rate_with(step: u64, base: f64, interval: u64) -> f64 {
    let phase = (step % interval) as f64 / interval as f64;
    0.5 * base * (1.0 + (PI * phase).cos())
}
