use ndarray::Array2;
use rand::Rng;

use crate::codec::TokenGrid;
use crate::error::{config_err, Result};
use crate::float::Scalar;
use crate::model::{HourglassModel, HourglassParams};
use crate::rng::StreamRng;

/// Mean cross-entropy over positions and its gradient w.r.t. the logits.
pub fn cross_entropy<F: Scalar>(logits: &Array2<F>, target: &TokenGrid) -> (f64, Array2<F>) {
    let n = logits.nrows();
    let inv_n = 1.0 / n as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for ((row, mut g), &t) in logits.rows().into_iter().zip(grad.rows_mut()).zip(target.tokens()) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64c()));
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64c() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += sum.ln() + max - row[t as usize].to_f64c();
        for (k, e) in exps.iter().enumerate() {
            let onehot = if k == t as usize { 1.0 } else { 0.0 };
            g[k] = F::from_f64c((e / sum - onehot) * inv_n);
        }
    }
    (total * inv_n, grad)
}

/// Draw one token per row from `softmax(logits / temperature)`.
pub fn sample_rows<F: Scalar, R: Rng>(logits: &Array2<F>, temperature: f64, rng: &mut R) -> Vec<u16> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let scaled: Vec<f64> = row.iter().map(|v| v.to_f64c() / temperature).collect();
            let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            for (k, w) in weights.iter().enumerate() {
                if u < *w {
                    return k as u16;
                }
                u -= w;
            }
            // Rounding left a sliver past the last bucket.
            weights.iter().rposition(|w| *w > 0.0).unwrap() as u16
        })
        .collect()
}

/// Result of unrolling the denoiser for `T` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledLoss {
    /// Mean of the per-step losses.
    pub loss: f64,
    pub step_losses: Vec<f64>,
    /// Inputs seen at each step: `z0, z1, ..., z_{T-1}`.
    pub chain: Vec<TokenGrid>,
}

/// Unroll `T` denoising steps from `z0`, scoring every step's logits
/// against the clean `z`. Intermediate grids are sampled at temperature 1
/// and enter the next step as plain inputs, so no gradient flows through
/// the sampling. When `grads` is given, the gradient of the mean loss is
/// accumulated into it.
#[allow(clippy::too_many_arguments)]
pub fn unrolled_loss<F: Scalar>(
    model: &HourglassModel<F>,
    z: &TokenGrid,
    z0: &TokenGrid,
    steps: usize,
    class: Option<usize>,
    rng: &mut StreamRng,
    mut dropout: Option<&mut StreamRng>,
    mut grads: Option<&mut HourglassParams<F>>,
) -> Result<UnrolledLoss> {
    if steps < 1 {
        return config_err("unroll steps must be at least 1");
    }
    let scale = F::from_f64c(1.0 / steps as f64);
    let mut current = z0.clone();
    let mut step_losses = Vec::with_capacity(steps);
    let mut chain = Vec::with_capacity(steps);
    for t in 0..steps {
        let (logits, cache) = model.forward_train(&current, class, dropout.as_deref_mut())?;
        let (l, mut dlogits) = cross_entropy(&logits, z);
        step_losses.push(l);
        if let Some(g) = grads.as_deref_mut() {
            dlogits.mapv_inplace(|v| v * scale);
            model.backward(&cache, &dlogits, g)?;
        }
        let next = if t + 1 < steps {
            Some(TokenGrid::new(z.height(), z.width(), sample_rows(&logits, 1.0, rng))?)
        } else {
            None
        };
        chain.push(std::mem::replace(&mut current, next.unwrap_or_else(|| z.clone())));
    }
    let loss = step_losses.iter().sum::<f64>() / steps as f64;
    Ok(UnrolledLoss { loss, step_losses, chain })
}

/// Recompute the unrolled loss for a recorded chain of inputs, treating
/// them as constants.
pub fn replay_unrolled_loss<F: Scalar>(
    model: &HourglassModel<F>,
    z: &TokenGrid,
    chain: &[TokenGrid],
    class: Option<usize>,
    mut grads: Option<&mut HourglassParams<F>>,
) -> Result<f64> {
    if chain.is_empty() {
        return config_err("unroll steps must be at least 1");
    }
    let scale = F::from_f64c(1.0 / chain.len() as f64);
    let mut total = 0.0;
    for input in chain {
        let (logits, cache) = model.forward_train(input, class, None)?;
        let (l, mut dlogits) = cross_entropy(&logits, z);
        total += l;
        if let Some(g) = grads.as_deref_mut() {
            dlogits.mapv_inplace(|v| v * scale);
            model.backward(&cache, &dlogits, g)?;
        }
    }
    Ok(total / chain.len() as f64)
}
