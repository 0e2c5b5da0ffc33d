//! The encoder network and decoder head assembled from the primitive layers.

use ndarray::{s, Array2};

use super::layers::{
    block_bwd, block_fwd, layernorm_bwd, layernorm_fwd, linear_bwd, linear_fwd, BlockCache,
    LnCache, Real,
};
use super::{ModelConfig, Parameters};
use crate::error::{Error, Result};
use crate::tokenizer::TokenBlockSequence;

fn check_window(blocks: &TokenBlockSequence, config: &ModelConfig) -> Result<Vec<[usize; 4]>> {
    if blocks.len() != config.max_side {
        return Err(Error::Shape(format!(
            "window has {} blocks, model expects {}",
            blocks.len(),
            config.max_side
        )));
    }
    let mut ids = Vec::with_capacity(blocks.len());
    for block in blocks.blocks() {
        let raw = block.ids();
        let mut row = [0usize; 4];
        for (f, (&id, &size)) in raw.iter().zip(&config.field_sizes).enumerate() {
            if (id as usize) >= size {
                return Err(Error::Shape(format!(
                    "token id {id} out of range for field {f} (size {size})"
                )));
            }
            row[f] = id as usize;
        }
        ids.push(row);
    }
    Ok(ids)
}

/// Sum the four field-token embeddings per note and add the learned
/// positional embedding over the concatenated sequence.
pub fn embed_notes<F: Real>(
    blocks1: &TokenBlockSequence,
    blocks2: &TokenBlockSequence,
    params: &Parameters<F>,
    config: &ModelConfig,
) -> Result<Array2<F>> {
    let ids1 = check_window(blocks1, config)?;
    let ids2 = check_window(blocks2, config)?;
    Ok(embed_ids(&ids1, &ids2, params, config))
}

const FIELD_TABLES: [&str; 4] = ["emb.time_shift", "emb.pitch", "emb.duration", "emb.velocity"];

fn embed_ids<F: Real>(
    ids1: &[[usize; 4]],
    ids2: &[[usize; 4]],
    params: &Parameters<F>,
    config: &ModelConfig,
) -> Array2<F> {
    let d = config.residual_dim;
    let side = config.max_side;
    let pos = params.view2("emb.pos");
    let tables: Vec<_> = FIELD_TABLES.iter().map(|n| params.view2(n)).collect();
    let mut out = Array2::zeros((2 * side, d));
    for (half, ids) in [ids1, ids2].into_iter().enumerate() {
        for (k, row_ids) in ids.iter().enumerate() {
            let position = half * side + k;
            let mut row = out.row_mut(position);
            for (field, &id) in row_ids.iter().enumerate() {
                row += &tables[field].row(id);
            }
            row += &pos.row(position);
        }
    }
    out
}

pub struct EncoderCache<F> {
    ids1: Vec<[usize; 4]>,
    ids2: Vec<[usize; 4]>,
    ln_in: LnCache<F>,
    blocks: Vec<BlockCache<F>>,
    ln_out: LnCache<F>,
    ln_out_out: Array2<F>,
    /// Final note representations (output of the projection).
    pub reps: Array2<F>,
}

fn encode_cached<F: Real>(
    embedded: &Array2<F>,
    params: &Parameters<F>,
    config: &ModelConfig,
) -> (Array2<F>, LnCache<F>, Vec<BlockCache<F>>, LnCache<F>, Array2<F>) {
    let (mut x, ln_in) = layernorm_fwd(embedded, params, "enc.ln_in");
    let mut blocks = Vec::with_capacity(config.num_blocks);
    for b in 0..config.num_blocks {
        let (next, cache) = block_fwd(&x, params, &format!("enc.b{b}"), config.num_heads);
        blocks.push(cache);
        x = next;
    }
    let (ln_out_out, ln_out) = layernorm_fwd(&x, params, "enc.ln_out");
    let reps = linear_fwd(&ln_out_out, params, "enc.proj");
    (reps, ln_in, blocks, ln_out, ln_out_out)
}

/// Run the encoder stack over embedded input: initial layer norm,
/// `num_blocks` pre-normalized blocks, final layer norm, and a
/// dimension-preserving linear layer.
pub fn encode<F: Real>(
    embedded: &Array2<F>,
    params: &Parameters<F>,
    config: &ModelConfig,
) -> Result<Array2<F>> {
    let expected = (config.sequence_length(), config.residual_dim);
    if embedded.dim() != expected {
        return Err(Error::Shape(format!(
            "embeddings have shape {:?}, expected {:?}",
            embedded.dim(),
            expected
        )));
    }
    let (reps, ..) = encode_cached(embedded, params, config);
    for v in reps.iter() {
        if !v.is_finite() {
            return Err(Error::validation("non-finite activation in encoder output"));
        }
    }
    Ok(reps)
}

/// Pairwise dot products between the two halves of the representations:
/// rows are s1 notes, columns are s2 notes.
pub fn similarity<F: Real>(reps: &Array2<F>, side: usize) -> Result<Array2<F>> {
    if reps.nrows() != 2 * side {
        return Err(Error::Shape(format!(
            "representations have {} rows, expected {}",
            reps.nrows(),
            2 * side
        )));
    }
    let r1 = reps.slice(s![..side, ..]);
    let r2 = reps.slice(s![side.., ..]);
    Ok(r1.dot(&r2.t()))
}

pub struct HeadCache<F> {
    /// Head input: one row per real s2 note, holding that note's similarity
    /// column.
    input: Array2<F>,
    blocks: Vec<BlockCache<F>>,
    ln_out: LnCache<F>,
    ln_out_out: Array2<F>,
}

fn decoder_head_cached<F: Real>(
    sim: &Array2<F>,
    params: &Parameters<F>,
    config: &ModelConfig,
) -> (Array2<F>, HeadCache<F>) {
    let side = config.max_side;
    // Row r of the head input is the similarity column of real s2 note r+1.
    let input = sim.slice(s![.., 1..]).t().to_owned();
    let mut x = linear_fwd(&input, params, "head.in");
    x += &params.view2("head.pos");
    let mut blocks = Vec::with_capacity(config.head_blocks);
    for b in 0..config.head_blocks {
        let (next, cache) = block_fwd(&x, params, &format!("head.b{b}"), config.num_heads);
        blocks.push(cache);
        x = next;
    }
    let (ln_out_out, ln_out) = layernorm_fwd(&x, params, "head.ln_out");
    let logits = linear_fwd(&ln_out_out, params, "head.out");
    debug_assert_eq!(logits.dim(), (side - 1, side));
    let cache = HeadCache {
        input,
        blocks,
        ln_out,
        ln_out_out,
    };
    (logits, cache)
}

/// Decoder head: project each real s2 note's similarity column to the head
/// dimension, run the attention stack over the row positions, and project to
/// one logit per s1 candidate.
pub fn decoder_head<F: Real>(
    sim: &Array2<F>,
    params: &Parameters<F>,
    config: &ModelConfig,
) -> Result<Array2<F>> {
    let side = config.max_side;
    if sim.dim() != (side, side) {
        return Err(Error::Shape(format!(
            "similarity has shape {:?}, expected ({side}, {side})",
            sim.dim()
        )));
    }
    Ok(decoder_head_cached(sim, params, config).0)
}

/// Everything one training step needs from the forward pass.
pub struct ForwardPass<F> {
    pub sim: Array2<F>,
    pub head_logits: Option<Array2<F>>,
    encoder: EncoderCache<F>,
    head: Option<HeadCache<F>>,
}

/// Full cached forward pass over a tokenized window pair.
pub fn forward_pair<F: Real>(
    blocks1: &TokenBlockSequence,
    blocks2: &TokenBlockSequence,
    params: &Parameters<F>,
    config: &ModelConfig,
    with_head: bool,
) -> Result<ForwardPass<F>> {
    let ids1 = check_window(blocks1, config)?;
    let ids2 = check_window(blocks2, config)?;
    let embedded = embed_ids(&ids1, &ids2, params, config);
    let (reps, ln_in, blocks, ln_out, ln_out_out) = encode_cached(&embedded, params, config);
    let sim = similarity(&reps, config.max_side)?;
    let encoder = EncoderCache {
        ids1,
        ids2,
        ln_in,
        blocks,
        ln_out,
        ln_out_out,
        reps,
    };
    let (head_logits, head) = if with_head {
        let (logits, cache) = decoder_head_cached(&sim, params, config);
        (Some(logits), Some(cache))
    } else {
        (None, None)
    };
    Ok(ForwardPass {
        sim,
        head_logits,
        encoder,
        head,
    })
}

/// Backpropagate loss gradients (`dsim` over the similarity matrix, and
/// optionally `dlogits` over the head output) into parameter gradients.
pub fn backward_pair<F: Real>(
    pass: &ForwardPass<F>,
    dsim: &Array2<F>,
    dlogits: Option<&Array2<F>>,
    params: &Parameters<F>,
    config: &ModelConfig,
    grads: &mut Parameters<F>,
) {
    let side = config.max_side;
    let mut dsim = dsim.clone();

    if let (Some(head), Some(dlogits)) = (pass.head.as_ref(), dlogits) {
        let d_ln_out_out = linear_bwd(&head.ln_out_out, dlogits, params, grads, "head.out");
        let mut dx = layernorm_bwd(&head.ln_out, &d_ln_out_out, params, grads, "head.ln_out");
        for (b, cache) in head.blocks.iter().enumerate().rev() {
            dx = block_bwd(cache, &dx, params, grads, &format!("head.b{b}"), config.num_heads);
        }
        {
            let mut dpos = grads.view2_mut("head.pos");
            dpos += &dx;
        }
        let d_input = linear_bwd(&head.input, &dx, params, grads, "head.in");
        // Scatter the head-input gradient back into similarity columns.
        let mut d_sim_from_head = dsim.slice_mut(s![.., 1..]);
        d_sim_from_head += &d_input.t();
    }

    let enc = &pass.encoder;
    let r1 = enc.reps.slice(s![..side, ..]);
    let r2 = enc.reps.slice(s![side.., ..]);
    let mut d_reps = Array2::zeros(enc.reps.dim());
    d_reps.slice_mut(s![..side, ..]).assign(&dsim.dot(&r2));
    d_reps.slice_mut(s![side.., ..]).assign(&dsim.t().dot(&r1));

    let d_ln_out_out = linear_bwd(&enc.ln_out_out, &d_reps, params, grads, "enc.proj");
    let mut dx = layernorm_bwd(&enc.ln_out, &d_ln_out_out, params, grads, "enc.ln_out");
    for (b, cache) in enc.blocks.iter().enumerate().rev() {
        dx = block_bwd(cache, &dx, params, grads, &format!("enc.b{b}"), config.num_heads);
    }
    let d_embedded = layernorm_bwd(&enc.ln_in, &dx, params, grads, "enc.ln_in");

    // Embedding gradients: scatter-add each position's gradient row.
    for (half, ids) in [&enc.ids1, &enc.ids2].into_iter().enumerate() {
        for (k, row_ids) in ids.iter().enumerate() {
            let position = half * side + k;
            let grad_row = d_embedded.row(position).to_owned();
            for (field, &id) in row_ids.iter().enumerate() {
                let mut table = grads.view2_mut(FIELD_TABLES[field]);
                let mut row = table.row_mut(id);
                row += &grad_row;
            }
            let mut pos = grads.view2_mut("emb.pos");
            let mut row = pos.row_mut(position);
            row += &grad_row;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;
    use crate::note::{Note, NoteSequence};
    use crate::tokenizer::{tokenize, TokenVocabulary};

    fn micro_setup() -> (ModelConfig, Parameters<f64>, TokenBlockSequence, TokenBlockSequence) {
        let vocab = TokenVocabulary::default();
        let config = ModelConfig::preset(Preset::Micro, &vocab);
        let params = Parameters::init(&config, 42);
        let notes1 = vec![Note::new(0, 60, 240, 60), Note::new(480, 64, 240, 70)];
        let notes2 = vec![Note::new(0, 60, 230, 58), Note::new(500, 64, 250, 72)];
        let s1 = NoteSequence::from_notes(notes1).unwrap();
        let s2 = NoteSequence::from_notes(notes2).unwrap();
        let b1 = tokenize(&s1, &vocab).unwrap().prepend_default(&vocab).unwrap();
        let b2 = tokenize(&s2, &vocab).unwrap().prepend_default(&vocab).unwrap();
        (config, params, b1, b2)
    }

    #[test]
    fn embed_produces_expected_shape_and_additivity() {
        let (config, params, b1, b2) = micro_setup();
        let embedded = embed_notes(&b1, &b2, &params, &config).unwrap();
        assert_eq!(embedded.dim(), (6, config.residual_dim));
        // Identical blocks at different positions differ exactly by the
        // positional embedding difference.
        let pos = params.view2("emb.pos");
        let blocks1 = b1.blocks();
        let blocks2 = b2.blocks();
        assert_eq!(blocks1[0].ids(), blocks2[0].ids()); // both default blocks
        let diff = &embedded.row(0) - &embedded.row(3);
        let pos_diff = &pos.row(0) - &pos.row(3);
        for (a, b) in diff.iter().zip(pos_diff.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_params_embed_to_zero() {
        let (config, params, b1, b2) = micro_setup();
        let zeros = params.grad_like();
        let embedded = embed_notes(&b1, &b2, &zeros, &config).unwrap();
        assert!(embedded.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_preserves_shape_and_rejects_bad_input() {
        let (config, params, b1, b2) = micro_setup();
        let embedded = embed_notes(&b1, &b2, &params, &config).unwrap();
        let reps = encode(&embedded, &params, &config).unwrap();
        assert_eq!(reps.dim(), embedded.dim());
        let bad = Array2::<f64>::zeros((4, config.residual_dim));
        assert!(encode(&bad, &params, &config).is_err());
    }

    #[test]
    fn similarity_is_dot_products() {
        let reps = ndarray::array![
            [1.0, 0.0],
            [0.0, 2.0],
            [3.0, 1.0],
            [1.0, 1.0],
            [0.0, 1.0],
            [2.0, 0.0],
        ];
        let sim = similarity(&reps, 3).unwrap();
        assert_eq!(sim.dim(), (3, 3));
        // Hand-computed dot products.
        assert_eq!(sim[[0, 0]], 1.0); // (1,0)·(1,1)
        assert_eq!(sim[[1, 1]], 2.0); // (0,2)·(0,1)
        assert_eq!(sim[[2, 2]], 6.0); // (3,1)·(2,0)
        assert_eq!(sim[[2, 0]], 4.0); // (3,1)·(1,1)
        // Identical halves give a symmetric matrix.
        let mut both = Array2::zeros((6, 2));
        both.slice_mut(s![..3, ..]).assign(&reps.slice(s![..3, ..]));
        both.slice_mut(s![3.., ..]).assign(&reps.slice(s![..3, ..]));
        let sym = similarity(&both, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(sym[[i, j]], sym[[j, i]]);
            }
        }
    }

    #[test]
    fn head_output_shape_and_uniform_zero_weights() {
        let (config, params, b1, b2) = micro_setup();
        let pass = forward_pair(&b1, &b2, &params, &config, false).unwrap();
        let logits = decoder_head(&pass.sim, &params, &config).unwrap();
        assert_eq!(logits.dim(), (config.max_side - 1, config.max_side));
        // All-zero head weights produce uniform (all-zero) logits.
        let zeros = params.grad_like();
        let logits0 = decoder_head(&pass.sim, &zeros, &config).unwrap();
        assert!(logits0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_pair_is_deterministic() {
        let (config, params, b1, b2) = micro_setup();
        let a = forward_pair(&b1, &b2, &params, &config, true).unwrap();
        let b = forward_pair(&b1, &b2, &params, &config, true).unwrap();
        assert_eq!(a.sim, b.sim);
        assert_eq!(a.head_logits, b.head_logits);
    }
}
