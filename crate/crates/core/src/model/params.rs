use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::HourglassConfig;
use crate::float::Scalar;

/// Standard deviation of the normal initializer for weights and embeddings.
pub const INIT_STD: f64 = 0.02;

fn normal<F: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<F> {
    let dist = Normal::new(0.0, INIT_STD).unwrap();
    Array2::from_shape_simple_fn((rows, cols), || F::from_f64c(dist.sample(rng)))
}

/// Affine map `y = x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub w: Array2<F>,
    pub b: Array2<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn init<R: Rng>(inp: usize, out: usize, rng: &mut R) -> Self {
        Self { w: normal(inp, out, rng), b: Array2::zeros((1, out)) }
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<F>)>) {
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.b"), &self.b));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Array2<F>>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gain: Array2<F>,
    pub bias: Array2<F>,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn init(dim: usize) -> Self {
        Self { gain: Array2::ones((1, dim)), bias: Array2::zeros((1, dim)) }
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<F>)>) {
        out.push((format!("{prefix}.gain"), &self.gain));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Array2<F>>) {
        out.push(&mut self.gain);
        out.push(&mut self.bias);
    }
}

/// Pre-norm transformer block: attention and MLP sub-layers with residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<F> {
    pub norm_attn: LayerNorm<F>,
    pub qkv: Linear<F>,
    pub proj: Linear<F>,
    pub norm_mlp: LayerNorm<F>,
    pub fc_in: Linear<F>,
    pub fc_out: Linear<F>,
}

impl<F: Scalar> BlockParams<F> {
    pub fn init<R: Rng>(dim: usize, mlp_ratio: usize, rng: &mut R) -> Self {
        Self {
            norm_attn: LayerNorm::init(dim),
            qkv: Linear::init(dim, 3 * dim, rng),
            proj: Linear::init(dim, dim, rng),
            norm_mlp: LayerNorm::init(dim),
            fc_in: Linear::init(dim, mlp_ratio * dim, rng),
            fc_out: Linear::init(mlp_ratio * dim, dim, rng),
        }
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array2<F>)>) {
        self.norm_attn.tensors(&format!("{prefix}.norm_attn"), out);
        self.qkv.tensors(&format!("{prefix}.qkv"), out);
        self.proj.tensors(&format!("{prefix}.proj"), out);
        self.norm_mlp.tensors(&format!("{prefix}.norm_mlp"), out);
        self.fc_in.tensors(&format!("{prefix}.fc_in"), out);
        self.fc_out.tensors(&format!("{prefix}.fc_out"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Array2<F>>) {
        self.norm_attn.tensors_mut(out);
        self.qkv.tensors_mut(out);
        self.proj.tensors_mut(out);
        self.norm_mlp.tensors_mut(out);
        self.fc_in.tensors_mut(out);
        self.fc_out.tensors_mut(out);
    }
}

/// All learnable tensors of the hourglass. The same type doubles as the
/// gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct HourglassParams<F> {
    pub token_embedding: Array2<F>,
    pub class_embedding: Option<Array2<F>>,
    pub pre: Vec<BlockParams<F>>,
    pub down: Linear<F>,
    pub down_attn: BlockParams<F>,
    pub mid: Vec<BlockParams<F>>,
    pub up: Linear<F>,
    pub up_attn: BlockParams<F>,
    pub post: Vec<BlockParams<F>>,
    pub norm_out: LayerNorm<F>,
    pub head: Linear<F>,
}

impl<F: Scalar> HourglassParams<F> {
    pub fn init<R: Rng>(cfg: &HourglassConfig, rng: &mut R) -> Self {
        let d = cfg.model_dim;
        let k = cfg.shorten_factor;
        let r = cfg.mlp_ratio;
        let (a, b, c) = cfg.depths;
        Self {
            token_embedding: normal(cfg.vocab, d, rng),
            class_embedding: cfg.class_count.map(|n| normal(n, d, rng)),
            pre: (0..a).map(|_| BlockParams::init(d, r, rng)).collect(),
            down: Linear::init(d * k, d, rng),
            down_attn: BlockParams::init(d, r, rng),
            mid: (0..b).map(|_| BlockParams::init(d, r, rng)).collect(),
            up: Linear::init(d, d * k, rng),
            up_attn: BlockParams::init(d, r, rng),
            post: (0..c).map(|_| BlockParams::init(d, r, rng)).collect(),
            norm_out: LayerNorm::init(d),
            head: Linear::init(d, cfg.vocab, rng),
        }
    }

    /// Named tensors in canonical order.
    pub fn tensors(&self) -> Vec<(String, &Array2<F>)> {
        let mut out = vec![("token_embedding".to_string(), &self.token_embedding)];
        if let Some(c) = &self.class_embedding {
            out.push(("class_embedding".to_string(), c));
        }
        for (i, b) in self.pre.iter().enumerate() {
            b.tensors(&format!("pre.{i}"), &mut out);
        }
        self.down.tensors("down", &mut out);
        self.down_attn.tensors("down_attn", &mut out);
        for (i, b) in self.mid.iter().enumerate() {
            b.tensors(&format!("mid.{i}"), &mut out);
        }
        self.up.tensors("up", &mut out);
        self.up_attn.tensors("up_attn", &mut out);
        for (i, b) in self.post.iter().enumerate() {
            b.tensors(&format!("post.{i}"), &mut out);
        }
        self.norm_out.tensors("norm_out", &mut out);
        self.head.tensors("head", &mut out);
        out
    }

    /// Mutable tensors, same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<F>> {
        let mut out = vec![&mut self.token_embedding];
        if let Some(c) = &mut self.class_embedding {
            out.push(c);
        }
        for b in &mut self.pre {
            b.tensors_mut(&mut out);
        }
        self.down.tensors_mut(&mut out);
        self.down_attn.tensors_mut(&mut out);
        for b in &mut self.mid {
            b.tensors_mut(&mut out);
        }
        self.up.tensors_mut(&mut out);
        self.up_attn.tensors_mut(&mut out);
        for b in &mut self.post {
            b.tensors_mut(&mut out);
        }
        self.norm_out.tensors_mut(&mut out);
        self.head.tensors_mut(&mut out);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(F::zero());
        }
        z
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: F) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|v| v * s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Convert every tensor to another float type.
    pub fn cast<G: Scalar>(&self) -> HourglassParams<G> {
        let conv = |a: &Array2<F>| a.mapv(|v| G::from_f64c(v.to_f64c()));
        let lin = |l: &Linear<F>| Linear { w: conv(&l.w), b: conv(&l.b) };
        let ln = |l: &LayerNorm<F>| LayerNorm { gain: conv(&l.gain), bias: conv(&l.bias) };
        let blk = |b: &BlockParams<F>| BlockParams {
            norm_attn: ln(&b.norm_attn),
            qkv: lin(&b.qkv),
            proj: lin(&b.proj),
            norm_mlp: ln(&b.norm_mlp),
            fc_in: lin(&b.fc_in),
            fc_out: lin(&b.fc_out),
        };
        HourglassParams {
            token_embedding: conv(&self.token_embedding),
            class_embedding: self.class_embedding.as_ref().map(conv),
            pre: self.pre.iter().map(blk).collect(),
            down: lin(&self.down),
            down_attn: blk(&self.down_attn),
            mid: self.mid.iter().map(blk).collect(),
            up: lin(&self.up),
            up_attn: blk(&self.up_attn),
            post: self.post.iter().map(blk).collect(),
            norm_out: ln(&self.norm_out),
            head: lin(&self.head),
        }
    }
}
