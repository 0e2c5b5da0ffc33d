//! Training loop: Adam over the dual similarity cross-entropy plus the
//! decoder-head cross-entropy, with a cosine-restart learning rate, JSONL
//! metrics, checkpointing, and resume.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use ndarray::{s, Array2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::adam::AdamState;
use super::checkpoint::{save_checkpoint, Checkpoint};
use super::layers::Real;
use super::loss::{argmax_accuracy, dual_ce_loss_grad, head_ce_loss, targets_from_truth, Targets};
use super::network::{backward_pair, forward_pair};
use super::schedule::learning_rate_with;
use super::{ModelConfig, Parameters};
use crate::augment::{crop_pair, make_training_pair, AugmentationConfig, AugmentedPair};
use crate::error::{Error, Result};
use crate::note::NoteSequence;
use crate::tokenizer::{tokenize, TokenBlockSequence, TokenVocabulary};

/// Where training pairs come from.
pub enum TrainData<'a> {
    /// Sample a fresh augmented window pair from a random corpus piece each
    /// step (the normal mode).
    Corpus {
        sequences: &'a [NoteSequence],
        augment: &'a AugmentationConfig,
    },
    /// Cycle deterministically through pre-built pairs (overfit runs, tests).
    Fixed(&'a [AugmentedPair]),
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Total step target; training runs until the checkpoint's step counter
    /// reaches it, so resuming a half-finished run continues where it left
    /// off.
    pub steps: u64,
    /// Train the decoder head alongside the similarity matrix.
    pub with_head: bool,
    /// Compute validation loss/accuracy every this many steps (0 = only at
    /// the end). Ignored when no validation pairs are given.
    pub validation_interval: u64,
    /// Stop as soon as validation accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Save the checkpoint here during and after training.
    pub checkpoint_path: Option<PathBuf>,
    /// Save every this many steps (0 = only at the end).
    pub checkpoint_interval: u64,
    /// Append one JSON object per step to this file.
    pub metrics_path: Option<PathBuf>,
    /// Print progress to stderr every this many steps (0 = never).
    pub log_every: u64,
}

impl TrainOptions {
    pub fn new(steps: u64) -> Self {
        TrainOptions {
            steps,
            with_head: true,
            validation_interval: 0,
            target_accuracy: None,
            checkpoint_path: None,
            checkpoint_interval: 1000,
            metrics_path: None,
            log_every: 0,
        }
    }
}

/// One step of the training curve, as written to the metrics file.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub step: u64,
    /// Training loss of this step's batch (similarity CE + head CE).
    pub tl: f64,
    /// Validation loss, at validation steps only.
    pub vl: Option<f64>,
    /// Validation argmax accuracy, at validation steps only.
    pub va: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps_run: u64,
    pub final_loss: Option<f64>,
    pub final_vl: Option<f64>,
    pub final_va: Option<f64>,
    pub early_stopped: bool,
    pub metrics: Vec<MetricsRow>,
}

/// A tokenized, padded window pair with its loss targets. `n1`/`n2` are the
/// real-note counts plus one for the default note.
struct Sample {
    b1: TokenBlockSequence,
    b2: TokenBlockSequence,
    targets: Targets,
    n1: usize,
    n2: usize,
}

fn prepare_sample(
    pair: &AugmentedPair,
    vocab: &TokenVocabulary,
    config: &ModelConfig,
) -> Result<Sample> {
    let pair = crop_pair(pair, config.max_side - 1)?;
    if pair.s1.is_empty() || pair.s2.is_empty() {
        return Err(Error::validation("training pair has an empty side"));
    }
    let n1 = pair.s1.len() + 1;
    let n2 = pair.s2.len() + 1;
    let b1 = tokenize(&pair.s1, vocab)?
        .prepend_default(vocab)?
        .padded_to(config.max_side, vocab)?;
    let b2 = tokenize(&pair.s2, vocab)?
        .prepend_default(vocab)?
        .padded_to(config.max_side, vocab)?;
    let targets = targets_from_truth(&pair.truth, n1, n2)?;
    Ok(Sample {
        b1,
        b2,
        targets,
        n1,
        n2,
    })
}

struct SampleEval {
    loss: f64,
    accuracy: f64,
}

/// Forward one sample; loss terms cover only the real + default part of the
/// matrix, so padding positions receive no direct gradient. When a gradient
/// accumulator is given, backpropagate with the upstream gradient scaled by
/// `scale` (1/batch for averaging).
fn evaluate_sample<F: Real>(
    sample: &Sample,
    params: &Parameters<F>,
    config: &ModelConfig,
    with_head: bool,
    grad: Option<(&mut Parameters<F>, f64)>,
) -> Result<SampleEval> {
    let pass = forward_pair(&sample.b1, &sample.b2, params, config, with_head)?;
    let sim = pass.sim.slice(s![..sample.n1, ..sample.n2]).to_owned();
    let (sim_loss, dsim_local) = dual_ce_loss_grad(&sim, &sample.targets);
    let accuracy = argmax_accuracy(&sim, &sample.targets);
    let mut loss = sim_loss.to_f64().unwrap();
    let mut dlogits_local = None;
    if with_head {
        let logits = pass.head_logits.as_ref().expect("head was requested");
        let rows = sample.n2 - 1;
        let window = logits.slice(s![..rows, ..]).to_owned();
        let (head_loss, dlogits) = head_ce_loss(&window, &sample.targets.col_target);
        loss += head_loss.to_f64().unwrap();
        dlogits_local = Some(dlogits);
    }
    if let Some((grads, scale)) = grad {
        let side = config.max_side;
        let scale = F::c(scale);
        let mut dsim = Array2::<F>::zeros((side, side));
        dsim.slice_mut(s![..sample.n1, ..sample.n2])
            .assign(&(dsim_local * scale));
        let dlogits_full = dlogits_local.map(|local| {
            let mut full = Array2::<F>::zeros((side - 1, side));
            full.slice_mut(s![..local.nrows(), ..])
                .assign(&(local * scale));
            full
        });
        backward_pair(&pass, &dsim, dlogits_full.as_ref(), params, config, grads);
    }
    Ok(SampleEval { loss, accuracy })
}

fn samples_metrics<F: Real>(
    samples: &[Sample],
    params: &Parameters<F>,
    config: &ModelConfig,
    with_head: bool,
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut accuracy = 0.0;
    for sample in samples {
        let eval = evaluate_sample(sample, params, config, with_head, None)?;
        loss += eval.loss;
        accuracy += eval.accuracy;
    }
    let n = samples.len() as f64;
    Ok((loss / n, accuracy / n))
}

/// Mean loss and mean argmax accuracy over held-out pairs.
pub fn validation_metrics<F: Real>(
    pairs: &[AugmentedPair],
    params: &Parameters<F>,
    vocab: &TokenVocabulary,
    config: &ModelConfig,
    with_head: bool,
) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::validation("no validation pairs"));
    }
    let samples = pairs
        .iter()
        .map(|p| prepare_sample(p, vocab, config))
        .collect::<Result<Vec<_>>>()?;
    samples_metrics(&samples, params, config, with_head)
}

/// Stateless per-sample seed: the same (master, step, index) always yields
/// the same training pair, so equal-seed runs produce identical curves and a
/// resumed run continues the same sample sequence.
fn mix_seed(master: u64, step: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(step.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Run training, mutating the checkpoint in place. A freshly initialized
/// checkpoint starts from step 0; a loaded one resumes at its saved step
/// (with fresh Adam moments if the file carried none).
pub fn train(
    data: &TrainData<'_>,
    validation: &[AugmentedPair],
    checkpoint: &mut Checkpoint,
    options: &TrainOptions,
) -> Result<TrainReport> {
    let config = checkpoint.config.clone();
    config.validate()?;
    checkpoint.vocab.validate()?;
    if config.field_sizes != checkpoint.vocab.field_sizes() {
        return Err(Error::Checkpoint(
            "checkpoint config and vocabulary disagree on field sizes".into(),
        ));
    }
    let vocab = checkpoint.vocab.clone();
    let fixed_samples = match data {
        TrainData::Fixed(pairs) => {
            if pairs.is_empty() {
                return Err(Error::validation("no training pairs"));
            }
            Some(
                pairs
                    .iter()
                    .map(|p| prepare_sample(p, &vocab, &config))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        TrainData::Corpus { sequences, .. } => {
            if sequences.is_empty() {
                return Err(Error::validation("empty training corpus"));
            }
            None
        }
    };
    let val_samples = validation
        .iter()
        .map(|p| prepare_sample(p, &vocab, &config))
        .collect::<Result<Vec<_>>>()?;

    let mut metrics_file = match &options.metrics_path {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            Some((std::io::BufWriter::new(file), path.clone()))
        }
        None => None,
    };

    let batch = config.batch_size;
    let master = checkpoint.state.seed;
    let mut grads = checkpoint.params.grad_like();
    let mut metrics = Vec::new();
    let mut final_vl = None;
    let mut final_va = None;
    let mut early_stopped = false;
    let mut steps_run = 0u64;

    while checkpoint.state.step < options.steps {
        let step = checkpoint.state.step;
        let lr = learning_rate_with(
            step,
            checkpoint.state.base_lr,
            checkpoint.state.restart_interval,
        );
        grads.data.fill(0.0);
        let mut tl = 0.0f64;
        for idx in 0..batch {
            let sample_storage;
            let sample = if let Some(samples) = &fixed_samples {
                &samples[(step as usize * batch + idx) % samples.len()]
            } else if let TrainData::Corpus {
                sequences,
                augment,
            } = data
            {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(master, step, idx as u64));
                let piece = rng.random_range(0..sequences.len());
                let pair_seed = rng.next_u64();
                let (pair, _) = make_training_pair(&sequences[piece], augment, pair_seed)?;
                sample_storage = prepare_sample(&pair, &vocab, &config)?;
                &sample_storage
            } else {
                unreachable!("fixed data is pre-prepared");
            };
            let eval = evaluate_sample(
                sample,
                &checkpoint.params,
                &config,
                options.with_head,
                Some((&mut grads, 1.0 / batch as f64)),
            )
            .map_err(|e| Error::Divergence {
                step,
                message: e.to_string(),
            })?;
            tl += eval.loss;
        }
        let tl = tl / batch as f64;
        if !tl.is_finite() {
            return Err(Error::Divergence {
                step,
                message: format!("training loss became {tl}"),
            });
        }

        let adam = checkpoint
            .adam
            .get_or_insert_with(|| AdamState::new(checkpoint.params.data.len()));
        adam.step(&mut checkpoint.params, &grads, lr);
        checkpoint.state.adam_t = adam.t;
        checkpoint.state.step = step + 1;
        steps_run += 1;
        let now = checkpoint.state.step;
        let done = now >= options.steps;

        let mut vl = None;
        let mut va = None;
        let validate_now = !val_samples.is_empty()
            && ((options.validation_interval > 0 && now % options.validation_interval == 0)
                || done);
        if validate_now {
            let (l, a) =
                samples_metrics(&val_samples, &checkpoint.params, &config, options.with_head)?;
            if !l.is_finite() {
                return Err(Error::Divergence {
                    step,
                    message: format!("validation loss became {l}"),
                });
            }
            vl = Some(l);
            va = Some(a);
            final_vl = vl;
            final_va = va;
            if let Some(target) = options.target_accuracy {
                if a >= target {
                    early_stopped = true;
                }
            }
        }

        let row = MetricsRow {
            step: now,
            tl,
            vl,
            va,
            lr,
        };
        if let Some((writer, path)) = &mut metrics_file {
            let line = serde_json::to_string(&row).expect("metrics row serializes");
            writer
                .write_all(line.as_bytes())
                .and_then(|_| writer.write_all(b"\n"))
                .map_err(|e| Error::io(&*path, e))?;
        }
        if options.log_every > 0 && (now % options.log_every == 0 || done || early_stopped) {
            match va {
                Some(a) => eprintln!(
                    "step {now}/{} tl {tl:.4} vl {:.4} va {:.4} lr {lr:.6}",
                    options.steps,
                    vl.unwrap_or(f64::NAN),
                    a
                ),
                None => eprintln!("step {now}/{} tl {tl:.4} lr {lr:.6}", options.steps),
            }
        }
        metrics.push(row);

        if let Some(path) = &options.checkpoint_path {
            let save_now = done
                || early_stopped
                || (options.checkpoint_interval > 0 && now % options.checkpoint_interval == 0);
            if save_now {
                save_checkpoint(path, checkpoint)?;
            }
        }
        if early_stopped {
            break;
        }
    }

    if let Some((writer, path)) = &mut metrics_file {
        writer.flush().map_err(|e| Error::io(&*path, e))?;
    }
    Ok(TrainReport {
        steps_run,
        final_loss: metrics.last().map(|r| r.tl),
        final_vl,
        final_va,
        early_stopped,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::checkpoint::{load_checkpoint, TrainState};
    use crate::model::schedule::BASE_LR;
    use crate::model::Preset;
    use crate::note::Note;

    fn micro_setup(seed: u64) -> Checkpoint {
        let vocab = TokenVocabulary::default();
        let config = ModelConfig::preset(Preset::Micro, &vocab);
        Checkpoint {
            params: Parameters::init(&config, seed),
            config,
            vocab,
            state: TrainState::fresh(seed),
            adam: None,
        }
    }

    fn toy_pair() -> AugmentedPair {
        let notes = vec![Note::new(0, 60, 100, 64), Note::new(240, 67, 100, 80)];
        AugmentedPair::identity(&NoteSequence::from_notes(notes).unwrap())
    }

    #[test]
    fn micro_model_overfits_one_pair_and_stops_early() {
        let mut ckpt = micro_setup(5);
        let pairs = [toy_pair()];
        let mut options = TrainOptions::new(2000);
        options.validation_interval = 10;
        options.target_accuracy = Some(1.0);
        let report = train(&TrainData::Fixed(&pairs), &pairs, &mut ckpt, &options).unwrap();
        assert!(report.early_stopped, "never hit perfect accuracy");
        assert_eq!(report.final_va, Some(1.0));
        assert!(report.steps_run < 2000);
        assert_eq!(ckpt.state.step, report.steps_run);
    }

    #[test]
    fn equal_seeds_give_identical_curves() {
        let corpus: Vec<NoteSequence> = (0..2)
            .map(|k| {
                let notes = (0..520)
                    .map(|i| {
                        Note::new(i as u32 * 120, 40 + ((i + k * 7) % 40) as u8, 100, 64)
                    })
                    .collect();
                NoteSequence::from_notes(notes).unwrap()
            })
            .collect();
        let augment = AugmentationConfig::default();
        let run = |seed: u64| {
            let mut ckpt = micro_setup(seed);
            let options = TrainOptions::new(5);
            let data = TrainData::Corpus {
                sequences: &corpus,
                augment: &augment,
            };
            let report = train(&data, &[], &mut ckpt, &options).unwrap();
            (
                report.metrics.iter().map(|r| r.tl).collect::<Vec<_>>(),
                ckpt.params.data,
            )
        };
        let (curve_a, params_a) = run(9);
        let (curve_b, params_b) = run(9);
        assert_eq!(curve_a, curve_b);
        assert_eq!(params_a, params_b);
        let (curve_c, _) = run(10);
        assert_ne!(curve_a, curve_c);
    }

    #[test]
    fn resume_continues_at_the_saved_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.gnck");
        let pairs = [toy_pair()];
        let mut ckpt = micro_setup(3);
        let mut options = TrainOptions::new(10);
        options.checkpoint_path = Some(path.clone());
        let first = train(&TrainData::Fixed(&pairs), &[], &mut ckpt, &options).unwrap();
        assert_eq!(first.steps_run, 10);

        let mut resumed = load_checkpoint(&path).unwrap();
        assert_eq!(resumed.state.step, 10);
        assert!(resumed.adam.is_some());
        options.steps = 25;
        let second = train(&TrainData::Fixed(&pairs), &[], &mut resumed, &options).unwrap();
        assert_eq!(second.steps_run, 15);
        assert_eq!(second.metrics.first().unwrap().step, 11);
        assert_eq!(resumed.state.step, 25);
        assert!(second.final_loss.unwrap().is_finite());
    }

    #[test]
    fn blown_up_parameters_abort_with_divergence() {
        let mut ckpt = micro_setup(1);
        ckpt.params.data.fill(1e30);
        let pairs = [toy_pair()];
        let options = TrainOptions::new(1);
        let err = train(&TrainData::Fixed(&pairs), &[], &mut ckpt, &options).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 0, .. }), "{err}");
    }

    #[test]
    fn metrics_rows_and_jsonl_file_cover_every_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let pairs = [toy_pair()];
        let mut ckpt = micro_setup(2);
        let mut options = TrainOptions::new(5);
        options.metrics_path = Some(path.clone());
        options.validation_interval = 2;
        let report = train(&TrainData::Fixed(&pairs), &pairs, &mut ckpt, &options).unwrap();
        assert_eq!(report.metrics.len(), 5);
        assert_eq!(report.metrics[0].lr, BASE_LR);
        assert!(report.metrics[0].vl.is_none());
        assert!(report.metrics[1].vl.is_some());
        // The final step always validates.
        assert!(report.metrics[4].va.is_some());

        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        for (i, line) in lines.iter().enumerate() {
            let row: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(row["step"], (i + 1) as u64);
            for key in ["tl", "vl", "va", "lr"] {
                assert!(row.get(key).is_some(), "missing {key}");
            }
        }
    }
}
