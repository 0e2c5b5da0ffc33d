//! Primitive layers with explicit forward and backward passes.
//!
//! Every forward returns the activations a backward needs; every backward
//! accumulates parameter gradients into a flat gradient vector (via named
//! views) and returns the gradient with respect to its input.

use ndarray::{s, Array1, Array2, Axis, NdFloat};

use super::Parameters;

/// Scalar type of a model instance: f32 for training, f64 for the numerical
/// oracles.
pub trait Real: NdFloat {
    /// Shorthand for lossless-enough conversion from f64 constants.
    fn c(value: f64) -> Self {
        Self::from(value).expect("constant fits")
    }
}

impl Real for f32 {}
impl Real for f64 {}

const LN_EPS: f64 = 1e-5;

pub fn linear_fwd<F: Real>(x: &Array2<F>, p: &Parameters<F>, prefix: &str) -> Array2<F> {
    let w = p.view2(&format!("{prefix}.w"));
    let b = p.view1(&format!("{prefix}.b"));
    x.dot(&w.t()) + &b
}

/// Returns dx; accumulates dw and db.
pub fn linear_bwd<F: Real>(
    x: &Array2<F>,
    dy: &Array2<F>,
    p: &Parameters<F>,
    g: &mut Parameters<F>,
    prefix: &str,
) -> Array2<F> {
    let w_name = format!("{prefix}.w");
    let b_name = format!("{prefix}.b");
    {
        let dw = dy.t().dot(x);
        let mut w_grad = g.view2_mut(&w_name);
        w_grad += &dw;
        let mut b_grad = g.view1_mut(&b_name);
        b_grad += &dy.sum_axis(Axis(0));
    }
    dy.dot(&p.view2(&w_name))
}

pub struct LnCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

pub fn layernorm_fwd<F: Real>(
    x: &Array2<F>,
    p: &Parameters<F>,
    prefix: &str,
) -> (Array2<F>, LnCache<F>) {
    let gamma = p.view1(&format!("{prefix}.g"));
    let beta = p.view1(&format!("{prefix}.b"));
    let d = F::c(x.ncols() as f64);
    let mean = x.sum_axis(Axis(1)) / d;
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| F::one() / (v + F::c(LN_EPS)).sqrt());
    let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
    let y = &xhat * &gamma + &beta;
    (y, LnCache { xhat, inv_std })
}

/// Returns dx; accumulates dgamma and dbeta.
pub fn layernorm_bwd<F: Real>(
    cache: &LnCache<F>,
    dy: &Array2<F>,
    p: &Parameters<F>,
    g: &mut Parameters<F>,
    prefix: &str,
) -> Array2<F> {
    let g_name = format!("{prefix}.g");
    let b_name = format!("{prefix}.b");
    {
        let mut dgamma = g.view1_mut(&g_name);
        dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        let mut dbeta = g.view1_mut(&b_name);
        dbeta += &dy.sum_axis(Axis(0));
    }
    let gamma = p.view1(&g_name);
    let d = F::c(dy.ncols() as f64);
    let dxhat = dy * &gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
    let inv = cache.inv_std.view().insert_axis(Axis(1));
    (dxhat * d - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &inv / d
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

pub fn gelu_fwd<F: Real>(x: &Array2<F>) -> Array2<F> {
    let k = F::c(GELU_K);
    let c = F::c(GELU_C);
    let half = F::c(0.5);
    x.mapv(|v| half * v * (F::one() + (k * (v + c * v * v * v)).tanh()))
}

pub fn gelu_bwd<F: Real>(x: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let k = F::c(GELU_K);
    let c = F::c(GELU_C);
    let half = F::c(0.5);
    let three = F::c(3.0);
    let mut dx = x.clone();
    dx.zip_mut_with(dy, |v, &dout| {
        let t = (k * (*v + c * *v * *v * *v)).tanh();
        let sech2 = F::one() - t * t;
        let local = half * (F::one() + t) + half * *v * sech2 * k * (F::one() + three * c * *v * *v);
        *v = local * dout;
    });
    dx
}

pub fn softmax_rows<F: Real>(x: &Array2<F>) -> Array2<F> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub struct AttnCache<F> {
    x: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// Per-head softmaxed attention weights.
    attn: Vec<Array2<F>>,
    ctx: Array2<F>,
}

/// Full (non-causal, unmasked) multi-head self-attention.
pub fn attention_fwd<F: Real>(
    x: &Array2<F>,
    p: &Parameters<F>,
    prefix: &str,
    num_heads: usize,
) -> (Array2<F>, AttnCache<F>) {
    let (len, dim) = x.dim();
    let dh = dim / num_heads;
    let scale = F::c(1.0 / (dh as f64).sqrt());
    let q = linear_fwd(x, p, &format!("{prefix}.q"));
    let k = linear_fwd(x, p, &format!("{prefix}.k"));
    let v = linear_fwd(x, p, &format!("{prefix}.v"));
    let mut attn = Vec::with_capacity(num_heads);
    let mut ctx = Array2::zeros((len, dim));
    for h in 0..num_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let scores = qh.dot(&kh.t()) * scale;
        let weights = softmax_rows(&scores);
        ctx.slice_mut(cols).assign(&weights.dot(&vh));
        attn.push(weights);
    }
    let out = linear_fwd(&ctx, p, &format!("{prefix}.o"));
    let cache = AttnCache {
        x: x.clone(),
        q,
        k,
        v,
        attn,
        ctx,
    };
    (out, cache)
}

pub fn attention_bwd<F: Real>(
    cache: &AttnCache<F>,
    dy: &Array2<F>,
    p: &Parameters<F>,
    g: &mut Parameters<F>,
    prefix: &str,
    num_heads: usize,
) -> Array2<F> {
    let (len, dim) = cache.x.dim();
    let dh = dim / num_heads;
    let scale = F::c(1.0 / (dh as f64).sqrt());
    let dctx = linear_bwd(&cache.ctx, dy, p, g, &format!("{prefix}.o"));
    let mut dq = Array2::zeros((len, dim));
    let mut dk = Array2::zeros((len, dim));
    let mut dv = Array2::zeros((len, dim));
    for h in 0..num_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let weights = &cache.attn[h];
        let dctx_h = dctx.slice(cols);
        let vh = cache.v.slice(cols);
        dv.slice_mut(cols).assign(&weights.t().dot(&dctx_h));
        let dweights = dctx_h.dot(&vh.t());
        // Softmax backward per row.
        let inner = (&dweights * weights).sum_axis(Axis(1)).insert_axis(Axis(1));
        let dscores = (dweights - &inner) * weights * scale;
        dq.slice_mut(cols)
            .assign(&dscores.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols)
            .assign(&dscores.t().dot(&cache.q.slice(cols)));
    }
    let mut dx = linear_bwd(&cache.x, &dq, p, g, &format!("{prefix}.q"));
    dx += &linear_bwd(&cache.x, &dk, p, g, &format!("{prefix}.k"));
    dx += &linear_bwd(&cache.x, &dv, p, g, &format!("{prefix}.v"));
    dx
}

pub struct BlockCache<F> {
    ln1: LnCache<F>,
    attn: AttnCache<F>,
    ln2: LnCache<F>,
    ff_in: Array2<F>,
    ff_pre: Array2<F>,
    ff_act: Array2<F>,
}

/// Pre-normalized attention + feedforward block with residual connections:
/// `mid = x + attn(ln1(x)); out = mid + ff2(gelu(ff1(ln2(mid))))`.
pub fn block_fwd<F: Real>(
    x: &Array2<F>,
    p: &Parameters<F>,
    prefix: &str,
    num_heads: usize,
) -> (Array2<F>, BlockCache<F>) {
    let (h1, ln1) = layernorm_fwd(x, p, &format!("{prefix}.ln1"));
    let (attn_out, attn) = attention_fwd(&h1, p, &format!("{prefix}.attn"), num_heads);
    let mid = x + &attn_out;
    let (ff_in, ln2) = layernorm_fwd(&mid, p, &format!("{prefix}.ln2"));
    let ff_pre = linear_fwd(&ff_in, p, &format!("{prefix}.ff1"));
    let ff_act = gelu_fwd(&ff_pre);
    let ff_out = linear_fwd(&ff_act, p, &format!("{prefix}.ff2"));
    let out = &mid + &ff_out;
    let cache = BlockCache {
        ln1,
        attn,
        ln2,
        ff_in,
        ff_pre,
        ff_act,
    };
    (out, cache)
}

pub fn block_bwd<F: Real>(
    cache: &BlockCache<F>,
    dy: &Array2<F>,
    p: &Parameters<F>,
    g: &mut Parameters<F>,
    prefix: &str,
    num_heads: usize,
) -> Array2<F> {
    let d_act = linear_bwd(&cache.ff_act, dy, p, g, &format!("{prefix}.ff2"));
    let d_pre = gelu_bwd(&cache.ff_pre, &d_act);
    let d_ff_in = linear_bwd(&cache.ff_in, &d_pre, p, g, &format!("{prefix}.ff1"));
    let mut d_mid = layernorm_bwd(&cache.ln2, &d_ff_in, p, g, &format!("{prefix}.ln2"));
    d_mid += dy; // residual
    let d_attn_out = attention_bwd(&cache.attn, &d_mid, p, g, &format!("{prefix}.attn"), num_heads);
    let mut dx = layernorm_bwd(&cache.ln1, &d_attn_out, p, g, &format!("{prefix}.ln1"));
    dx += &d_mid; // residual
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layout, ModelConfig, Preset};
    use crate::tokenizer::TokenVocabulary;
    use ndarray::array;
    use std::sync::Arc;

    fn micro_params(seed: u64) -> (ModelConfig, Parameters<f64>) {
        let config = ModelConfig::preset(Preset::Micro, &TokenVocabulary::default());
        let params = Parameters::init(&config, seed);
        (config, params)
    }

    #[test]
    fn layernorm_normalizes_rows() {
        let (config, params) = micro_params(3);
        let _ = config;
        let x = array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 80.0]];
        let (y, _) = layernorm_fwd(&x, &params, "enc.ln_in");
        // gamma = 1, beta = 0 at init, so rows come out standardized.
        let mean: f64 = y.row(0).sum() / 8.0;
        let var: f64 = y.row(0).mapv(|v| (v - mean) * (v - mean)).sum() / 8.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn gelu_matches_reference_values() {
        // tanh-approximation values computed by hand.
        let x = array![[0.0f64, 1.0, -1.0, 3.0]];
        let y = gelu_fwd(&x);
        assert!((y[[0, 0]] - 0.0).abs() < 1e-12);
        assert!((y[[0, 1]] - 0.841192).abs() < 1e-6);
        assert!((y[[0, 2]] - (-0.158808)).abs() < 1e-6);
        assert!((y[[0, 3]] - 2.996363).abs() < 1e-6);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let x = array![[1.0, 2.0, 3.0], [-1000.0, 0.0, 1000.0]];
        let y = softmax_rows(&x);
        for row in y.rows() {
            assert!((row.sum() - 1.0f64).abs() < 1e-12);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(y[[1, 2]] > 0.999);
    }

    #[test]
    fn block_preserves_shape_and_is_deterministic() {
        let (config, params) = micro_params(5);
        let x = Array2::from_shape_fn((6, config.residual_dim), |(i, j)| {
            ((i * 7 + j * 3) % 11) as f64 / 10.0
        });
        let (y1, _) = block_fwd(&x, &params, "enc.b0", config.num_heads);
        let (y2, _) = block_fwd(&x, &params, "enc.b0", config.num_heads);
        assert_eq!(y1.dim(), x.dim());
        assert_eq!(y1, y2);
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        // Without positions, permuting input rows permutes output rows.
        let (config, params) = micro_params(9);
        let x = Array2::from_shape_fn((5, config.residual_dim), |(i, j)| {
            (i as f64 - j as f64) / 4.0
        });
        let (y, _) = attention_fwd(&x, &params, "enc.b0.attn", config.num_heads);
        let perm = [4usize, 2, 0, 1, 3];
        let xp = ndarray::stack(
            Axis(0),
            &perm.iter().map(|&i| x.row(i)).collect::<Vec<_>>(),
        )
        .unwrap();
        let (yp, _) = attention_fwd(&xp, &params, "enc.b0.attn", config.num_heads);
        for (new_pos, &old_pos) in perm.iter().enumerate() {
            for j in 0..config.residual_dim {
                assert!((yp[[new_pos, j]] - y[[old_pos, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_bwd_accumulates_grads() {
        let (config, params) = micro_params(11);
        let layout = Arc::new(Layout::new(&config));
        let mut grads: Parameters<f64> = Parameters::zeros(layout);
        let x = Array2::from_elem((4, config.residual_dim), 0.5);
        let y = linear_fwd(&x, &params, "enc.proj");
        let dy = Array2::from_elem(y.dim(), 1.0);
        let dx = linear_bwd(&x, &dy, &params, &mut grads, "enc.proj");
        assert_eq!(dx.dim(), x.dim());
        // db = column sums of dy = 4.
        assert!(grads.view1("enc.proj.b").iter().all(|&v| (v - 4.0).abs() < 1e-12));
        assert!(grads.view2("enc.proj.w").iter().any(|&v| v != 0.0));
    }
}
