//! Transformer encoder, decoder head, loss, training, and windowed inference.
//!
//! All parameters of a model live in one flat vector; [`Layout`] names each
//! tensor and assigns it a slice. That keeps the optimizer, checkpoint
//! serialization, and finite-difference checks uniform: they all operate on
//! the flat vector while the forward/backward passes borrow shaped views.

mod adam;
mod checkpoint;
mod infer;
mod layers;
mod loss;
mod network;
mod schedule;
mod train;

pub use adam::AdamState;
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, load_checkpoint_bytes, save_checkpoint, Checkpoint,
    TrainState,
};
pub use infer::{infer_global_similarity, SIMILARITY_SENTINEL};
pub use layers::Real;
pub use loss::{
    argmax_accuracy, dual_ce_loss, dual_ce_loss_grad, head_ce_loss, targets_from_truth, Targets,
};
pub use network::{
    backward_pair, decoder_head, embed_notes, encode, forward_pair, similarity, ForwardPass,
};
pub use schedule::{learning_rate, learning_rate_with, BASE_LR, RESTART_INTERVAL};
pub use train::{train, validation_metrics, MetricsRow, TrainData, TrainOptions, TrainReport};

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenVocabulary, MAX_BLOCKS};

/// Hyperparameters of the encoder and decoder head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub residual_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub ff_multiplier: usize,
    pub batch_size: usize,
    pub head_blocks: usize,
    pub head_dim: usize,
    /// Notes per window side including the default note (513 normally;
    /// smaller in numerical tests).
    pub max_side: usize,
    /// Token-id counts of the four note fields, from the vocabulary.
    pub field_sizes: [usize; 4],
}

/// Named model size from the published hyperparameter table, plus the
/// test-scale `tiny` and `micro` sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Micro,
    Tiny,
    Small,
    Mid,
    Large,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Preset::Micro => "micro",
            Preset::Tiny => "tiny",
            Preset::Small => "small",
            Preset::Mid => "mid",
            Preset::Large => "large",
        };
        f.write_str(name)
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Preset::Micro),
            "tiny" => Ok(Preset::Tiny),
            "small" => Ok(Preset::Small),
            "mid" => Ok(Preset::Mid),
            "large" => Ok(Preset::Large),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; expected micro, tiny, small, mid, or large"
            ))),
        }
    }
}

impl ModelConfig {
    pub fn preset(preset: Preset, vocab: &TokenVocabulary) -> Self {
        let field_sizes = vocab.field_sizes();
        let (residual_dim, num_blocks, num_heads, batch_size, head_blocks, max_side) =
            match preset {
                Preset::Micro => (8, 1, 2, 1, 1, 3),
                Preset::Tiny => (64, 2, 4, 1, 2, MAX_BLOCKS),
                Preset::Small => (128, 4, 8, 24, 2, MAX_BLOCKS),
                Preset::Mid => (256, 6, 8, 16, 2, MAX_BLOCKS),
                Preset::Large => (512, 8, 8, 8, 8, MAX_BLOCKS),
            };
        ModelConfig {
            residual_dim,
            num_blocks,
            num_heads,
            ff_multiplier: 4,
            batch_size,
            head_blocks,
            head_dim: residual_dim,
            max_side,
            field_sizes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.residual_dim == 0 || self.num_blocks == 0 || self.num_heads == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        // Sanity caps keep layout arithmetic far from overflow even for
        // hostile checkpoint headers.
        if self.residual_dim > 8192
            || self.head_dim > 8192
            || self.num_blocks > 64
            || self.head_blocks > 64
            || self.num_heads > 64
            || self.ff_multiplier > 16
            || self.batch_size > 4096
            || self.max_side > 4096
            || self.field_sizes.iter().any(|&s| s > 1 << 20)
        {
            return Err(Error::Config("model dimensions exceed supported bounds".into()));
        }
        if self.residual_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "residual_dim {} not divisible by num_heads {}",
                self.residual_dim, self.num_heads
            )));
        }
        if self.head_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "head_dim {} not divisible by num_heads {}",
                self.head_dim, self.num_heads
            )));
        }
        if self.ff_multiplier == 0 || self.batch_size == 0 {
            return Err(Error::Config("ff_multiplier and batch_size must be positive".into()));
        }
        if self.max_side < 2 {
            return Err(Error::Config("max_side must be at least 2".into()));
        }
        if self.field_sizes.iter().any(|&s| s < 2) {
            return Err(Error::Config("field sizes must be at least 2".into()));
        }
        Ok(())
    }

    /// Total number of scalar parameters (encoder plus head).
    pub fn parameter_count(&self) -> usize {
        Layout::new(self).total
    }

    /// Concatenated sequence length seen by the encoder.
    pub fn sequence_length(&self) -> usize {
        2 * self.max_side
    }
}

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered map of tensor names to slices of the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Layout {
    pub specs: Vec<TensorSpec>,
    pub total: usize,
    index: HashMap<String, usize>,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Layout {
        let d = config.residual_dim;
        let hd = config.head_dim;
        let ff = config.ff_multiplier;
        let side = config.max_side;
        let mut specs: Vec<TensorSpec> = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, shape: Vec<usize>| {
            let spec = TensorSpec {
                name,
                shape,
                offset,
            };
            offset += spec.len();
            specs.push(spec);
        };

        for (field, &size) in ["time_shift", "pitch", "duration", "velocity"]
            .iter()
            .zip(&config.field_sizes)
        {
            push(format!("emb.{field}"), vec![size, d]);
        }
        push("emb.pos".into(), vec![2 * side, d]);

        let push_block = |push: &mut dyn FnMut(String, Vec<usize>), prefix: &str, dim: usize| {
            push(format!("{prefix}.ln1.g"), vec![dim]);
            push(format!("{prefix}.ln1.b"), vec![dim]);
            for proj in ["q", "k", "v", "o"] {
                push(format!("{prefix}.attn.{proj}.w"), vec![dim, dim]);
                push(format!("{prefix}.attn.{proj}.b"), vec![dim]);
            }
            push(format!("{prefix}.ln2.g"), vec![dim]);
            push(format!("{prefix}.ln2.b"), vec![dim]);
            push(format!("{prefix}.ff1.w"), vec![ff * dim, dim]);
            push(format!("{prefix}.ff1.b"), vec![ff * dim]);
            push(format!("{prefix}.ff2.w"), vec![dim, ff * dim]);
            push(format!("{prefix}.ff2.b"), vec![dim]);
        };

        push("enc.ln_in.g".into(), vec![d]);
        push("enc.ln_in.b".into(), vec![d]);
        for b in 0..config.num_blocks {
            push_block(&mut push, &format!("enc.b{b}"), d);
        }
        push("enc.ln_out.g".into(), vec![d]);
        push("enc.ln_out.b".into(), vec![d]);
        push("enc.proj.w".into(), vec![d, d]);
        push("enc.proj.b".into(), vec![d]);

        push("head.in.w".into(), vec![hd, side]);
        push("head.in.b".into(), vec![hd]);
        push("head.pos".into(), vec![side - 1, hd]);
        for b in 0..config.head_blocks {
            push_block(&mut push, &format!("head.b{b}"), hd);
        }
        push("head.ln_out.g".into(), vec![hd]);
        push("head.ln_out.b".into(), vec![hd]);
        push("head.out.w".into(), vec![side, hd]);
        push("head.out.b".into(), vec![side]);

        let index = specs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.clone(), i))
            .collect();
        Layout {
            specs,
            total: offset,
            index,
        }
    }

    pub fn spec(&self, name: &str) -> &TensorSpec {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown tensor {name}"));
        &self.specs[i]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }
}

/// Model parameters (or a gradient of the same shape): a flat vector plus
/// the layout that names its pieces.
#[derive(Debug, Clone)]
pub struct Parameters<F> {
    pub layout: Arc<Layout>,
    pub data: Vec<F>,
}

impl<F: Real> Parameters<F> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![F::zero(); layout.total];
        Parameters { layout, data }
    }

    /// Seeded initialization: N(0, 0.02) weights and embeddings, zero
    /// biases, unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let layout = Arc::new(Layout::new(config));
        let mut params = Parameters::zeros(layout.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.02).expect("valid sigma");
        for spec in &layout.specs {
            let slice = &mut params.data[spec.offset..spec.offset + spec.len()];
            if spec.name.ends_with(".g") {
                slice.fill(F::one());
            } else if spec.name.ends_with(".b") {
                // biases and layer-norm shifts start at zero
            } else {
                for v in slice.iter_mut() {
                    *v = F::from(normal.sample(&mut rng)).unwrap();
                }
            }
        }
        params
    }

    pub fn grad_like(&self) -> Parameters<F> {
        Parameters::zeros(self.layout.clone())
    }

    pub fn view1(&self, name: &str) -> ArrayView1<'_, F> {
        let spec = self.layout.spec(name);
        assert_eq!(spec.shape.len(), 1, "{name} is not 1-d");
        ArrayView1::from(&self.data[spec.offset..spec.offset + spec.len()])
    }

    pub fn view2(&self, name: &str) -> ArrayView2<'_, F> {
        let spec = self.layout.spec(name);
        assert_eq!(spec.shape.len(), 2, "{name} is not 2-d");
        ArrayView2::from_shape((spec.shape[0], spec.shape[1]), &self.data[spec.offset..spec.offset + spec.len()])
            .expect("layout shape consistent")
    }

    pub fn view1_mut(&mut self, name: &str) -> ArrayViewMut1<'_, F> {
        let spec = self.layout.spec(name).clone();
        assert_eq!(spec.shape.len(), 1, "{name} is not 1-d");
        ArrayViewMut1::from(&mut self.data[spec.offset..spec.offset + spec.len()])
    }

    pub fn view2_mut(&mut self, name: &str) -> ArrayViewMut2<'_, F> {
        let spec = self.layout.spec(name).clone();
        assert_eq!(spec.shape.len(), 2, "{name} is not 2-d");
        ArrayViewMut2::from_shape(
            (spec.shape[0], spec.shape[1]),
            &mut self.data[spec.offset..spec.offset + spec.len()],
        )
        .expect("layout shape consistent")
    }

    /// Cast every value, preserving the layout.
    pub fn cast<G: Real>(&self) -> Parameters<G> {
        Parameters {
            layout: self.layout.clone(),
            data: self
                .data
                .iter()
                .map(|&v| G::from(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> TokenVocabulary {
        TokenVocabulary::default()
    }

    #[test]
    fn preset_parameter_counts_match_published_targets() {
        // Encoder + head targets: (1.1M + 0.6M), (5.7M + 2M), (28M + 27M),
        // each within 15%.
        for (preset, enc_target, head_target) in [
            (Preset::Small, 1.1e6, 0.6e6),
            (Preset::Mid, 5.7e6, 2.0e6),
            (Preset::Large, 28.0e6, 27.0e6),
        ] {
            let config = ModelConfig::preset(preset, &vocab());
            config.validate().unwrap();
            let layout = Layout::new(&config);
            let head: usize = layout
                .specs
                .iter()
                .filter(|s| s.name.starts_with("head."))
                .map(|s| s.len())
                .sum();
            let enc = layout.total - head;
            let enc_err = (enc as f64 - enc_target).abs() / enc_target;
            let head_err = (head as f64 - head_target).abs() / head_target;
            assert!(
                enc_err < 0.15,
                "{preset}: encoder {enc} vs target {enc_target} (err {enc_err:.3})"
            );
            assert!(
                head_err < 0.15,
                "{preset}: head {head} vs target {head_target} (err {head_err:.3})"
            );
        }
    }

    #[test]
    fn layout_is_contiguous_and_named() {
        let config = ModelConfig::preset(Preset::Micro, &vocab());
        let layout = Layout::new(&config);
        let mut expected = 0;
        for spec in &layout.specs {
            assert_eq!(spec.offset, expected);
            expected += spec.len();
        }
        assert_eq!(layout.total, expected);
        assert!(layout.contains("enc.b0.attn.q.w"));
        assert!(layout.contains("head.out.b"));
        assert_eq!(layout.spec("emb.pos").shape, vec![6, 8]);
        assert_eq!(layout.spec("head.in.w").shape, vec![8, 3]);
        assert_eq!(layout.spec("head.pos").shape, vec![2, 8]);
    }

    #[test]
    fn init_is_seeded_and_structured() {
        let config = ModelConfig::preset(Preset::Micro, &vocab());
        let a: Parameters<f64> = Parameters::init(&config, 1);
        let b: Parameters<f64> = Parameters::init(&config, 1);
        let c: Parameters<f64> = Parameters::init(&config, 2);
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
        assert!(a.view1("enc.ln_in.g").iter().all(|&v| v == 1.0));
        assert!(a.view1("enc.ln_in.b").iter().all(|&v| v == 0.0));
        assert!(a.view2("enc.b0.attn.q.w").iter().any(|&v| v != 0.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = ModelConfig::preset(Preset::Micro, &vocab());
        config.num_heads = 3;
        assert!(config.validate().is_err());
        let mut config = ModelConfig::preset(Preset::Micro, &vocab());
        config.max_side = 1;
        assert!(config.validate().is_err());
    }
}
