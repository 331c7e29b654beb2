#![allow(dead_code)]

use sundae_core::codec::TokenGrid;
use sundae_core::float::Scalar;
use sundae_core::model::{HourglassConfig, HourglassModel, HourglassParams};
use sundae_core::oracle::{finite_diff, FlatParams, Stencil};
use sundae_core::train::cross_entropy;

/// Gradient entries smaller than this are compared against this magnitude
/// instead of their own; below it, finite differences in f64 carry more
/// cancellation error than the 1e-6 relative budget allows.
pub const GRAD_FLOOR: f64 = 1e-5;

/// Same role for single-precision gradients: f32 accumulation leaves an
/// absolute error near 4e-7 on gradients of order one.
pub const F32_GRAD_FLOOR: f64 = 1e-3;

pub fn tiny_config(classes: Option<usize>) -> HourglassConfig {
    HourglassConfig {
        vocab: 5,
        grid_shape: (4, 4),
        model_dim: 8,
        depths: (1, 1, 1),
        shorten_factor: 4,
        heads: 2,
        class_count: classes,
        ..Default::default()
    }
}

pub fn tiny_inputs() -> (TokenGrid, TokenGrid) {
    let input = TokenGrid::new(4, 4, (0..16).map(|i| ((i * 7 + 3) % 5) as u16).collect()).unwrap();
    let target = TokenGrid::new(4, 4, (0..16).map(|i| ((i * 3 + 1) % 5) as u16).collect()).unwrap();
    (input, target)
}

/// Scale parameters up (and shift them off zero) so every nonlinearity is
/// exercised and gradients are well above finite-difference noise.
pub fn spread(model: &HourglassModel<f64>, factor: f64) -> HourglassModel<f64> {
    let mut params: HourglassParams<f64> = model.params().clone();
    for (i, t) in params.tensors_mut().into_iter().enumerate() {
        t.mapv_inplace(|v| v * factor + 0.01 * (i as f64 % 3.0 - 1.0));
    }
    HourglassModel::from_params(model.config().clone(), params).unwrap()
}

pub fn analytic_grad<F: Scalar>(
    model: &HourglassModel<F>,
    input: &TokenGrid,
    target: &TokenGrid,
    class: Option<usize>,
) -> Vec<f64> {
    let (logits, cache) = model.forward_train(input, class, None).unwrap();
    let (_, dlogits) = cross_entropy(&logits, target);
    let mut grads = model.params().zeros_like();
    model.backward(&cache, &dlogits, &mut grads).unwrap();
    (0..grads.len()).map(|i| grads.get(i)).collect()
}

pub fn numeric_grad(
    model: &HourglassModel<f64>,
    input: &TokenGrid,
    target: &TokenGrid,
    class: Option<usize>,
    eps: f64,
    stencil: Stencil,
) -> Vec<f64> {
    let cfg = model.config().clone();
    let mut params = model.params().clone();
    finite_diff(
        |p: &HourglassParams<f64>| {
            let m = HourglassModel::from_params(cfg.clone(), p.clone()).unwrap();
            cross_entropy(&m.forward(input, class).unwrap(), target).0
        },
        &mut params,
        eps,
        stencil,
    )
    .unwrap()
}

/// `|a - n| / max(|a| + |n|, floor)`, maximized over entries, with the index.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(floor))
        .enumerate()
        .fold((0.0, 0), |best, (i, e)| if e > best.0 { (e, i) } else { best })
}

/// Row-wise log-softmax of the model logits at `state`, computed here rather
/// than through the library's likelihood code.
fn log_probs(model: &HourglassModel<f64>, state: &[u16], h: usize, w: usize) -> Vec<Vec<f64>> {
    let logits = model.forward(&TokenGrid::new(h, w, state.to_vec()).unwrap(), None).unwrap();
    logits
        .rows()
        .into_iter()
        .map(|r| {
            let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = r.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            r.iter().map(|x| x - lse).collect()
        })
        .collect()
}

fn all_states(v: usize, n: usize) -> Vec<Vec<u16>> {
    (0..v.pow(n as u32))
        .map(|mut i| {
            let mut s = vec![0u16; n];
            for slot in s.iter_mut().rev() {
                *slot = (i % v) as u16;
                i /= v;
            }
            s
        })
        .collect()
}

/// Brute-force expectations for a tiny unconditional model with a two-step
/// unroll: `(expected loss per token, exact -ln p(z) per token)` for `z`.
pub fn brute_force_two_step(model: &HourglassModel<f64>, z: &[u16]) -> (f64, f64) {
    let (h, w) = model.config().grid_shape;
    let v = model.config().vocab;
    let n = h * w;
    let states = all_states(v, n);
    let lp: Vec<Vec<Vec<f64>>> = states.iter().map(|s| log_probs(model, s, h, w)).collect();
    let ce = |s: usize| -(0..n).map(|j| lp[s][j][z[j] as usize]).sum::<f64>() / n as f64;
    let trans = |a: usize, b: usize| (0..n).map(|j| lp[a][j][states[b][j] as usize]).sum::<f64>().exp();
    let next_ce: Vec<f64> = (0..states.len()).map(|a| (0..states.len()).map(|b| trans(a, b) * ce(b)).sum()).collect();

    // q(z0 | z) = int_0^1 prod_j [(1-t) 1{z0_j = z_j} + t/v] dt by Simpson's rule.
    let cells = 4000;
    let weight = |agree: usize| {
        let f = |t: f64| ((1.0 - t) + t / v as f64).powi(agree as i32) * (t / v as f64).powi((n - agree) as i32);
        let hstep = 1.0 / cells as f64;
        (0..=cells)
            .map(|i| {
                let c = if i == 0 || i == cells {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * f(i as f64 * hstep)
            })
            .sum::<f64>()
            * hstep
            / 3.0
    };
    let mut loss = 0.0;
    for (a, s) in states.iter().enumerate() {
        let agree = s.iter().zip(z).filter(|(x, y)| x == y).count();
        loss += weight(agree) * 0.5 * (ce(a) + next_ce[a]);
    }

    let target = states.iter().position(|s| s == z).unwrap();
    let prior = 1.0 / states.len() as f64;
    let p: f64 =
        (0..states.len()).map(|a| prior * (0..states.len()).map(|b| trans(a, b) * trans(b, target)).sum::<f64>()).sum();
    (loss, -p.ln() / n as f64)
}
