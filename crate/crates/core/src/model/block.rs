//! Full (non-causal) multi-head self-attention with axial rotary positions,
//! wrapped in a pre-norm transformer block.

use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::layers::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward, softmax_rows, NormCache,
};
use super::params::BlockParams;
use super::rotary::AxialRotary;
use crate::float::Scalar;
use crate::rng::StreamRng;

pub struct AttnCache<F> {
    input: Array2<F>,
    /// Rotated queries and keys, `positions x dim`.
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
}

impl<F> AttnCache<F> {
    /// Attention weights per head, `positions x positions`.
    pub fn probs(&self) -> &[Array2<F>] {
        &self.probs
    }
}

pub fn attention<F: Scalar>(
    x: Array2<F>,
    p: &BlockParams<F>,
    heads: usize,
    rot: &AxialRotary<F>,
) -> (Array2<F>, AttnCache<F>) {
    let n = x.nrows();
    let d = x.ncols();
    let hd = d / heads;
    let scale = F::one() / F::from_usize(hd).unwrap().sqrt();
    let qkv = linear(&x.view(), &p.qkv);
    let mut q = qkv.slice(s![.., 0..d]).to_owned();
    let mut k = qkv.slice(s![.., d..2 * d]).to_owned();
    let v = qkv.slice(s![.., 2 * d..3 * d]).to_owned();
    let mut ctx = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        rot.apply(&mut q.slice_mut(cols), false);
        rot.apply(&mut k.slice_mut(cols), false);
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores.mapv_inplace(|v| v * scale);
        softmax_rows(&mut scores);
        ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let y = linear(&ctx.view(), &p.proj);
    (y, AttnCache { input: x, q, k, v, probs, ctx })
}

pub fn attention_backward<F: Scalar>(
    cache: &AttnCache<F>,
    p: &BlockParams<F>,
    dy: &Array2<F>,
    grad: &mut BlockParams<F>,
    rot: &AxialRotary<F>,
) -> Array2<F> {
    let (n, d) = cache.q.dim();
    let heads = cache.probs.len();
    let hd = d / heads;
    let scale = F::one() / F::from_usize(hd).unwrap().sqrt();
    let dctx = linear_backward(&cache.ctx.view(), &p.proj, dy, &mut grad.proj);
    let mut dqkv = Array2::zeros((n, 3 * d));
    for (h, probs) in cache.probs.iter().enumerate() {
        let cols = s![.., h * hd..(h + 1) * hd];
        let dctx_h = dctx.slice(cols);
        let dprobs = dctx_h.dot(&cache.v.slice(cols).t());
        let dv = probs.t().dot(&dctx_h);
        // Softmax Jacobian, row by row.
        let mut dscores = &dprobs * probs;
        let rowdot = dscores.sum_axis(Axis(1));
        for ((mut row, pr), r) in dscores.rows_mut().into_iter().zip(probs.rows()).zip(rowdot.iter()) {
            row.zip_mut_with(&pr, |g, &pv| *g = (*g - pv * *r) * scale);
        }
        let mut dq = dscores.dot(&cache.k.slice(cols));
        let mut dk = dscores.t().dot(&cache.q.slice(cols));
        rot.apply(&mut dq.view_mut(), true);
        rot.apply(&mut dk.view_mut(), true);
        dqkv.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&dq);
        dqkv.slice_mut(s![.., d + h * hd..d + (h + 1) * hd]).assign(&dk);
        dqkv.slice_mut(s![.., 2 * d + h * hd..2 * d + (h + 1) * hd]).assign(&dv);
    }
    linear_backward(&cache.input.view(), &p.qkv, &dqkv, &mut grad.qkv)
}

pub struct BlockCache<F> {
    norm_attn: NormCache<F>,
    attn: AttnCache<F>,
    drop_attn: Option<Array2<F>>,
    norm_mlp: NormCache<F>,
    mlp_in: Array2<F>,
    pre_act: Array2<F>,
    act: Array2<F>,
    drop_mlp: Option<Array2<F>>,
}

impl<F> BlockCache<F> {
    pub fn attention(&self) -> &AttnCache<F> {
        &self.attn
    }
}

/// Dropout applied to residual branches during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut StreamRng,
}

fn dropout_mask<F: Scalar>(shape: (usize, usize), drop: &mut Option<Dropout<'_>>) -> Option<Array2<F>> {
    let d = drop.as_mut().filter(|d| d.rate > 0.0)?;
    let keep = F::from_f64c(1.0 / (1.0 - d.rate));
    Some(Array2::from_shape_simple_fn(shape, || if d.rng.gen::<f64>() < d.rate { F::zero() } else { keep }))
}

pub fn block_forward<F: Scalar>(
    x: Array2<F>,
    p: &BlockParams<F>,
    heads: usize,
    rot: &AxialRotary<F>,
    drop: &mut Option<Dropout<'_>>,
) -> (Array2<F>, BlockCache<F>) {
    let (a, norm_attn) = layer_norm(&x, &p.norm_attn);
    let (mut att, attn) = attention(a, p, heads, rot);
    let drop_attn = dropout_mask(att.dim(), drop);
    if let Some(m) = &drop_attn {
        att *= m;
    }
    let x1 = x + &att;
    let (mlp_in, norm_mlp) = layer_norm(&x1, &p.norm_mlp);
    let pre_act = linear(&mlp_in.view(), &p.fc_in);
    let act = gelu(&pre_act);
    let mut m = linear(&act.view(), &p.fc_out);
    let drop_mlp = dropout_mask(m.dim(), drop);
    if let Some(mask) = &drop_mlp {
        m *= mask;
    }
    let out = x1 + &m;
    (out, BlockCache { norm_attn, attn, drop_attn, norm_mlp, mlp_in, pre_act, act, drop_mlp })
}

pub fn block_backward<F: Scalar>(
    cache: &BlockCache<F>,
    p: &BlockParams<F>,
    dy: Array2<F>,
    grad: &mut BlockParams<F>,
    rot: &AxialRotary<F>,
) -> Array2<F> {
    let mut dm = dy.clone();
    if let Some(mask) = &cache.drop_mlp {
        dm *= mask;
    }
    let dact = linear_backward(&cache.act.view(), &p.fc_out, &dm, &mut grad.fc_out);
    let dpre = gelu_backward(&cache.pre_act, &dact);
    let dmlp_in = linear_backward(&cache.mlp_in.view(), &p.fc_in, &dpre, &mut grad.fc_in);
    let dx1 = dy + &layer_norm_backward(&cache.norm_mlp, &p.norm_mlp, &dmlp_in, &mut grad.norm_mlp);
    let mut datt = dx1.clone();
    if let Some(mask) = &cache.drop_attn {
        datt *= mask;
    }
    let da = attention_backward(&cache.attn, p, &datt, grad, rot);
    dx1 + &layer_norm_backward(&cache.norm_attn, &p.norm_attn, &da, &mut grad.norm_attn)
}
