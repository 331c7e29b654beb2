use ndarray::Zip;

use crate::float::Scalar;
use crate::model::HourglassParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamSettings {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam with decoupled weight decay. Decay applies to projection weights and
/// embeddings, not to biases or norm parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<F> {
    pub settings: AdamSettings,
    pub first: HourglassParams<F>,
    pub second: HourglassParams<F>,
    pub updates: u64,
}

fn decays(name: &str) -> bool {
    name.ends_with(".w") || name.ends_with("embedding")
}

impl<F: Scalar> AdamW<F> {
    pub fn new(settings: AdamSettings, like: &HourglassParams<F>) -> Self {
        Self { settings, first: like.zeros_like(), second: like.zeros_like(), updates: 0 }
    }

    pub fn update(&mut self, params: &mut HourglassParams<F>, grads: &HourglassParams<F>) {
        let s = self.settings;
        self.updates += 1;
        let t = self.updates as i32;
        let b1 = F::from_f64c(s.beta1);
        let b2 = F::from_f64c(s.beta2);
        let one = F::one();
        let corr1 = F::from_f64c(1.0 - s.beta1.powi(t));
        let corr2 = F::from_f64c(1.0 - s.beta2.powi(t));
        let lr = F::from_f64c(s.learning_rate);
        let eps = F::from_f64c(s.eps);
        let names: Vec<bool> = grads.tensors().iter().map(|(n, _)| decays(n)).collect();
        let wd = F::from_f64c(s.weight_decay);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut());
        for ((((p, (_, g)), m), v), decay) in tensors.zip(names) {
            let wd = if decay { wd } else { F::zero() };
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let step = (*m / corr1) / ((*v / corr2).sqrt() + eps) + wd * *p;
                *p -= lr * step;
            });
        }
    }
}
