//! Adam optimizer over the flat parameter vector.

use serde::{Deserialize, Serialize};

use super::layers::Real;
use super::Parameters;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates plus the update counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One bias-corrected update of `params` from `grads` at learning rate
    /// `lr`. Moments are kept in f64 regardless of the model precision.
    pub fn step<F: Real>(&mut self, params: &mut Parameters<F>, grads: &Parameters<F>, lr: f64) {
        assert_eq!(self.m.len(), params.data.len(), "optimizer/model size");
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..params.data.len() {
            let g = grads.data[i].to_f64().unwrap();
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let update = lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            let old = params.data[i].to_f64().unwrap();
            params.data[i] = F::c(old - update);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layout, ModelConfig, Preset};
    use crate::tokenizer::TokenVocabulary;
    use std::sync::Arc;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let config = ModelConfig::preset(Preset::Micro, &TokenVocabulary::default());
        let layout = Arc::new(Layout::new(&config));
        let mut params: Parameters<f64> = Parameters::zeros(layout.clone());
        let mut grads: Parameters<f64> = Parameters::zeros(layout.clone());
        grads.data[0] = 3.0;
        grads.data[1] = -0.001;
        let mut adam = AdamState::new(layout.total);
        adam.step(&mut params, &grads, 0.1);
        // Bias-corrected first step is ~lr * sign(g) for any gradient size.
        assert!((params.data[0] + 0.1).abs() < 1e-4);
        assert!((params.data[1] - 0.1).abs() < 1e-4);
        assert_eq!(params.data[2], 0.0);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn repeated_steps_decay_toward_minimum() {
        // Minimize f(x) = x^2 on a single coordinate.
        let config = ModelConfig::preset(Preset::Micro, &TokenVocabulary::default());
        let layout = Arc::new(Layout::new(&config));
        let mut params: Parameters<f64> = Parameters::zeros(layout.clone());
        params.data[0] = 5.0;
        let mut adam = AdamState::new(layout.total);
        let mut grads: Parameters<f64> = Parameters::zeros(layout);
        for _ in 0..2000 {
            grads.data[0] = 2.0 * params.data[0];
            adam.step(&mut params, &grads, 0.05);
        }
        assert!(params.data[0].abs() < 1e-2);
    }
}
