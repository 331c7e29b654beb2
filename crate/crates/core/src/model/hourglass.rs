use ndarray::{Array2, Axis};

use super::block::{block_backward, block_forward, BlockCache, Dropout};
use super::config::HourglassConfig;
use super::layers::{layer_norm, layer_norm_backward, linear, linear_backward, NormCache};
use super::params::{BlockParams, HourglassParams};
use super::resample::{depth_to_space, space_to_depth};
use super::rotary::AxialRotary;
use crate::codec::TokenGrid;
use crate::error::{config_err, shape_err, Error, Result};
use crate::float::Scalar;
use crate::rng::{self, Purpose, StreamRng};

/// A sequence of hidden vectors together with the grid it is laid out on.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState<F> {
    pub values: Array2<F>,
    pub grid: (usize, usize),
}

/// Hourglass denoiser: embeddings, full-resolution blocks, 2D shortening,
/// shortened blocks, 2D upsampling with a skip from before the shortening,
/// full-resolution blocks, and a projection to per-position vocab logits.
#[derive(Debug, Clone)]
pub struct HourglassModel<F> {
    config: HourglassConfig,
    params: HourglassParams<F>,
    rot_fine: AxialRotary<F>,
    rot_short: AxialRotary<F>,
}

/// Activations kept from a training forward pass.
pub struct ForwardCache<F> {
    tokens: Vec<usize>,
    class: Option<usize>,
    pre: Vec<BlockCache<F>>,
    packed: Array2<F>,
    down_attn: BlockCache<F>,
    mid: Vec<BlockCache<F>>,
    mid_out: Array2<F>,
    up_attn: BlockCache<F>,
    post: Vec<BlockCache<F>>,
    norm_out: NormCache<F>,
    head_in: Array2<F>,
}

impl<F> ForwardCache<F> {
    /// Cache of the first full-resolution block (exposes attention weights).
    pub fn first_block(&self) -> &BlockCache<F> {
        &self.pre[0]
    }
}

impl<F: Scalar> HourglassModel<F> {
    /// Randomly initialized model.
    pub fn new(config: HourglassConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, Purpose::Init, &[]);
        let params = HourglassParams::init(&config, &mut rng);
        Self::from_params(config, params)
    }

    pub fn from_params(config: HourglassConfig, params: HourglassParams<F>) -> Result<Self> {
        config.validate()?;
        let mut reference = HourglassParams::<F>::init(&config, &mut rng::stream(0, Purpose::Init, &[]));
        reference = reference.zeros_like();
        let want = reference.tensors();
        let got = params.tensors();
        if want.len() != got.len() {
            return shape_err(format!("expected {} parameter tensors, got {}", want.len(), got.len()));
        }
        for ((name, a), (_, b)) in want.iter().zip(&got) {
            if a.dim() != b.dim() {
                return shape_err(format!("parameter {name} has shape {:?}, expected {:?}", b.dim(), a.dim()));
            }
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        let hd = config.head_dim();
        Ok(Self {
            rot_fine: AxialRotary::new(hd, config.grid_shape),
            rot_short: AxialRotary::new(hd, config.short_grid()),
            config,
            params,
        })
    }

    pub fn config(&self) -> &HourglassConfig {
        &self.config
    }

    pub fn params(&self) -> &HourglassParams<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut HourglassParams<F> {
        &mut self.params
    }

    pub fn into_params(self) -> HourglassParams<F> {
        self.params
    }

    pub fn cast<G: Scalar>(&self) -> HourglassModel<G> {
        HourglassModel::from_params(self.config.clone(), self.params.cast()).expect("cast preserves shapes")
    }

    fn rotary_for(&self, grid: (usize, usize)) -> Result<&AxialRotary<F>> {
        if grid == self.rot_fine.grid() {
            Ok(&self.rot_fine)
        } else if grid == self.rot_short.grid() {
            Ok(&self.rot_short)
        } else {
            shape_err(format!("no rotary table for grid {grid:?}"))
        }
    }

    fn check_inputs(&self, tokens: &TokenGrid, class: Option<usize>) -> Result<()> {
        if tokens.shape() != self.config.grid_shape {
            return shape_err(format!(
                "token grid {:?} does not match model grid {:?}",
                tokens.shape(),
                self.config.grid_shape
            ));
        }
        tokens.check_vocab(self.config.vocab)?;
        match (class, self.config.class_count) {
            (Some(c), None) => config_err(format!("class label {c} given to an unconditional model")),
            (Some(c), Some(n)) if c >= n => config_err(format!("class label {c} >= class count {n}")),
            _ => Ok(()),
        }
    }

    /// Token embedding lookup plus the class embedding, if any. Positions
    /// are injected later by the rotary attention, not here.
    pub fn embed(&self, tokens: &TokenGrid, class: Option<usize>) -> Result<HiddenState<F>> {
        self.check_inputs(tokens, class)?;
        let idx: Vec<usize> = tokens.tokens().iter().map(|&t| t as usize).collect();
        let mut values = self.params.token_embedding.select(Axis(0), &idx);
        if let (Some(c), Some(table)) = (class, &self.params.class_embedding) {
            values += &table.row(c);
        }
        Ok(HiddenState { values, grid: tokens.shape() })
    }

    /// One transformer block (rotary full self-attention + MLP) at the
    /// state's resolution.
    pub fn attend(&self, block: &BlockParams<F>, state: &HiddenState<F>) -> Result<HiddenState<F>> {
        let rot = self.rotary_for(state.grid)?;
        let (values, _) = block_forward(state.values.clone(), block, self.config.heads, rot, &mut None);
        Ok(HiddenState { values, grid: state.grid })
    }

    /// Space-to-depth, linear projection back to the model dim, then the
    /// post-resampling attention block.
    pub fn shorten_2d(&self, state: &HiddenState<F>) -> Result<HiddenState<F>> {
        let s = self.config.block_side();
        let packed = space_to_depth(&state.values, state.grid, s)?;
        let grid = (state.grid.0 / s, state.grid.1 / s);
        let projected = HiddenState { values: linear(&packed.view(), &self.params.down), grid };
        self.attend(&self.params.down_attn, &projected)
    }

    /// Linear projection to `dim * k`, depth-to-space onto the fine grid,
    /// add the residual, then the post-resampling attention block.
    pub fn upsample_2d(&self, state: &HiddenState<F>, residual: &HiddenState<F>) -> Result<HiddenState<F>> {
        let s = self.config.block_side();
        if residual.grid != (state.grid.0 * s, state.grid.1 * s) || residual.values.ncols() != state.values.ncols() {
            return shape_err(format!(
                "residual {:?} on grid {:?} does not match upsampled {:?}",
                residual.values.dim(),
                residual.grid,
                state.grid
            ));
        }
        let expanded = linear(&state.values.view(), &self.params.up);
        let fine = depth_to_space(&expanded, residual.grid, s)? + &residual.values;
        self.attend(&self.params.up_attn, &HiddenState { values: fine, grid: residual.grid })
    }

    /// Per-position vocab logits, `positions x vocab`.
    pub fn forward(&self, tokens: &TokenGrid, class: Option<usize>) -> Result<Array2<F>> {
        self.forward_train(tokens, class, None).map(|(logits, _)| logits)
    }

    /// Forward pass that keeps activations for [`Self::backward`]. A dropout
    /// stream enables residual dropout when the config asks for it.
    pub fn forward_train(
        &self,
        tokens: &TokenGrid,
        class: Option<usize>,
        dropout_rng: Option<&mut StreamRng>,
    ) -> Result<(Array2<F>, ForwardCache<F>)> {
        let cfg = &self.config;
        let heads = cfg.heads;
        let s = cfg.block_side();
        let mut drop = dropout_rng.filter(|_| cfg.dropout > 0.0).map(|rng| Dropout { rate: cfg.dropout, rng });
        let mut x = self.embed(tokens, class)?.values;

        let run = |x: Array2<F>, blocks: &[BlockParams<F>], rot, drop: &mut Option<Dropout<'_>>| {
            let mut caches = Vec::with_capacity(blocks.len());
            let mut x = x;
            for b in blocks {
                let (y, c) = block_forward(x, b, heads, rot, drop);
                caches.push(c);
                x = y;
            }
            (x, caches)
        };

        let pre;
        (x, pre) = run(x, &self.params.pre, &self.rot_fine, &mut drop);
        let residual = x.clone();
        let packed = space_to_depth(&x, cfg.grid_shape, s)?;
        let projected = linear(&packed.view(), &self.params.down);
        let (short, down_attn) = block_forward(projected, &self.params.down_attn, heads, &self.rot_short, &mut drop);
        let (mid_out, mid) = run(short, &self.params.mid, &self.rot_short, &mut drop);
        let expanded = linear(&mid_out.view(), &self.params.up);
        let fine = depth_to_space(&expanded, cfg.grid_shape, s)? + &residual;
        let (x, up_attn) = block_forward(fine, &self.params.up_attn, heads, &self.rot_fine, &mut drop);
        let (x, post) = run(x, &self.params.post, &self.rot_fine, &mut drop);
        let (head_in, norm_out) = layer_norm(&x, &self.params.norm_out);
        let logits = linear(&head_in.view(), &self.params.head);
        let cache = ForwardCache {
            tokens: tokens.tokens().iter().map(|&t| t as usize).collect(),
            class,
            pre,
            packed,
            down_attn,
            mid,
            mid_out,
            up_attn,
            post,
            norm_out,
            head_in,
        };
        Ok((logits, cache))
    }

    /// Accumulate parameter gradients of a scalar loss into `grads`, given
    /// the loss gradient with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache<F>, dlogits: &Array2<F>, grads: &mut HourglassParams<F>) -> Result<()> {
        let p = &self.params;
        let s = self.config.block_side();
        let grid = self.config.grid_shape;
        let dhead = linear_backward(&cache.head_in.view(), &p.head, dlogits, &mut grads.head);
        let mut dx = layer_norm_backward(&cache.norm_out, &p.norm_out, &dhead, &mut grads.norm_out);
        for ((c, b), g) in cache.post.iter().zip(&p.post).zip(&mut grads.post).rev() {
            dx = block_backward(c, b, dx, g, &self.rot_fine);
        }
        let dfine = block_backward(&cache.up_attn, &p.up_attn, dx, &mut grads.up_attn, &self.rot_fine);
        let dexpanded = space_to_depth(&dfine, grid, s)?;
        let mut dx = linear_backward(&cache.mid_out.view(), &p.up, &dexpanded, &mut grads.up);
        for ((c, b), g) in cache.mid.iter().zip(&p.mid).zip(&mut grads.mid).rev() {
            dx = block_backward(c, b, dx, g, &self.rot_short);
        }
        let dprojected = block_backward(&cache.down_attn, &p.down_attn, dx, &mut grads.down_attn, &self.rot_short);
        let dpacked = linear_backward(&cache.packed.view(), &p.down, &dprojected, &mut grads.down);
        let mut dx = depth_to_space(&dpacked, grid, s)? + &dfine;
        for ((c, b), g) in cache.pre.iter().zip(&p.pre).zip(&mut grads.pre).rev() {
            dx = block_backward(c, b, dx, g, &self.rot_fine);
        }
        for (row, &t) in dx.rows().into_iter().zip(&cache.tokens) {
            let mut target = grads.token_embedding.row_mut(t);
            target += &row;
        }
        if let (Some(c), Some(g)) = (cache.class, grads.class_embedding.as_mut()) {
            let mut target = g.row_mut(c);
            target += &dx.sum_axis(Axis(0));
        }
        Ok(())
    }
}
