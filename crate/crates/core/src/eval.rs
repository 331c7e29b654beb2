//! Desk-scale metrics: corruption loss, exact likelihood on enumerable
//! spaces, and token-marginal distances.

use rayon::prelude::*;

use crate::codec::{LatentDataset, TokenGrid};
use crate::error::{config_err, Result};
use crate::float::Scalar;
use crate::model::HourglassModel;
use crate::oracle::{exact_model_nll_all, state_index, Conditioned, EnumerableSpec, LogitModel, Nll};
use crate::rng::{stream, Purpose};
use crate::sampler::SampleTrace;
use crate::train::{corrupt, unrolled_loss};

/// Mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub draws: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { mean, std_err: (var / n).sqrt(), draws: xs.len() }
    }
}

/// Unrolled denoising loss per token, averaged over `draws` corruptions.
/// Draw `d` scores entry `d % len`.
pub fn corruption_loss<F: Scalar>(
    model: &HourglassModel<F>,
    dataset: &LatentDataset,
    unroll_steps: usize,
    draws: usize,
    seed: u64,
) -> Result<Estimate> {
    if dataset.is_empty() || draws == 0 {
        return config_err("loss estimate needs a non-empty dataset and at least one draw");
    }
    let conditional = model.config().class_count.is_some();
    let losses = (0..draws)
        .into_par_iter()
        .map(|d| {
            let idx = d % dataset.len();
            let z = &dataset.entries()[idx];
            let class = if conditional { dataset.labels().map(|l| l[idx] as usize) } else { None };
            let mut crng = stream(seed, Purpose::Eval, &[d as u64, 0]);
            let z0 = corrupt(std::slice::from_ref(z), model.config().vocab, &mut crng).z0.remove(0);
            let mut urng = stream(seed, Purpose::Eval, &[d as u64, 1]);
            Ok(unrolled_loss(model, z, &z0, unroll_steps, class, &mut urng, None, None)?.loss)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(&losses))
}

/// Whether the model's state space is small enough to enumerate.
pub fn is_enumerable<F: Scalar>(model: &HourglassModel<F>, steps: usize) -> bool {
    let cfg = model.config();
    EnumerableSpec { vocab: cfg.vocab, positions: cfg.positions(), steps }.check().is_ok()
}

/// Exact `-ln p(z) / N` averaged over the dataset.
pub fn exact_nll_per_token<F: Scalar>(model: &HourglassModel<F>, dataset: &LatentDataset, steps: usize) -> Result<Nll> {
    let n = model.config().positions() as f64;
    let v = model.config().vocab;
    let table = |class: Option<usize>| -> Result<Vec<Nll>> {
        match class {
            Some(c) => exact_model_nll_all(&Conditioned { model, class: c } as &dyn LogitModel, steps),
            None => exact_model_nll_all(model as &dyn LogitModel, steps),
        }
    };
    let classes = match (model.config().class_count, dataset.labels()) {
        (Some(k), Some(_)) => (0..k).map(Some).collect::<Vec<_>>(),
        _ => vec![None],
    };
    let tables = classes.iter().map(|c| table(*c)).collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for (i, z) in dataset.entries().iter().enumerate() {
        let t = match (tables.len(), dataset.labels()) {
            (1, _) | (_, None) => &tables[0],
            (_, Some(l)) => &tables[l[i] as usize],
        };
        match t[state_index(z.tokens(), v)] {
            Nll::Finite(x) => total += x,
            Nll::Overflow => return Ok(Nll::Overflow),
        }
    }
    Ok(Nll::Finite(total / (dataset.len() as f64 * n)))
}

/// Normalized histogram of tokens pooled over all grids and positions.
pub fn token_marginal(grids: &[TokenGrid], vocab: usize) -> Vec<f64> {
    let mut counts = vec![0usize; vocab];
    for g in grids {
        for &t in g.tokens() {
            counts[t as usize] += 1;
        }
    }
    let total = counts.iter().sum::<usize>().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / total).collect()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Total variation between the pooled token marginals of two grid sets.
pub fn marginal_tv(a: &[TokenGrid], b: &[TokenGrid], vocab: usize) -> f64 {
    total_variation(&token_marginal(a, vocab), &token_marginal(b, vocab))
}

/// Mean stop step; items that never froze count as the number of steps run.
pub fn mean_stop_step(trace: &SampleTrace) -> f64 {
    let steps = trace.effective_stop_steps();
    steps.iter().sum::<usize>() as f64 / steps.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub loss: Estimate,
    pub exact_nll: Option<Nll>,
    pub marginal_tv: Option<f64>,
    pub mean_stop_step: Option<f64>,
}

impl EvalReport {
    /// `metric,value` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("loss_per_token,{}\n", self.loss.mean));
        out.push_str(&format!("loss_std_err,{}\n", self.loss.std_err));
        match self.exact_nll {
            Some(Nll::Finite(x)) => out.push_str(&format!("exact_nll_per_token,{x}\n")),
            Some(Nll::Overflow) => out.push_str("exact_nll_per_token,overflow\n"),
            None => {}
        }
        if let Some(tv) = self.marginal_tv {
            out.push_str(&format!("marginal_tv,{tv}\n"));
        }
        if let Some(s) = self.mean_stop_step {
            out.push_str(&format!("mean_stop_step,{s}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HourglassConfig;

    fn grid(tokens: &[u16]) -> TokenGrid {
        TokenGrid::new(1, tokens.len(), tokens.to_vec()).unwrap()
    }

    #[test]
    fn marginals_and_tv() {
        let a = [grid(&[0, 0, 1, 1])];
        let b = [grid(&[0, 0, 0, 0]), grid(&[1, 1, 1, 1])];
        assert_eq!(token_marginal(&a, 3), vec![0.5, 0.5, 0.0]);
        assert_eq!(marginal_tv(&a, &b, 3), 0.0);
        assert_eq!(marginal_tv(&a, &[grid(&[2, 2, 2, 2])], 3), 1.0);
        assert!((total_variation(&[0.2, 0.8], &[0.5, 0.5]) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn estimate_stats() {
        let e = Estimate::from_samples(&[1.0, 3.0]);
        assert_eq!(e.mean, 2.0);
        assert!((e.std_err - 1.0).abs() < 1e-12);
        assert_eq!(Estimate::from_samples(&[4.0]).std_err, 0.0);
    }

    #[test]
    fn uniform_model_loss_is_log_vocab() {
        let cfg = HourglassConfig {
            vocab: 3,
            grid_shape: (2, 2),
            model_dim: 8,
            depths: (1, 1, 1),
            heads: 2,
            ..Default::default()
        };
        let mut model = HourglassModel::<f64>::new(cfg, 1).unwrap();
        model.params_mut().head.w.fill(0.0);
        model.params_mut().head.b.fill(0.0);
        let data = LatentDataset::new(3, vec![TokenGrid::new(2, 2, vec![0, 1, 2, 0]).unwrap()], None).unwrap();
        let est = corruption_loss(&model, &data, 2, 20, 3).unwrap();
        assert!((est.mean - 3f64.ln()).abs() < 1e-12);
        assert!(is_enumerable(&model, 2));
        let nll = exact_nll_per_token(&model, &data, 2).unwrap().value().unwrap();
        assert!((nll - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn stop_step_mean() {
        let trace = SampleTrace { steps: vec![vec![]; 9], stop_steps: vec![Some(4), None] };
        assert_eq!(mean_stop_step(&trace), 6.0);
    }
}
