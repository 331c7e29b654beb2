use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::corruption::corrupt;
use super::loss::unrolled_loss;
use super::optim::{AdamSettings, AdamW};
use crate::codec::LatentDataset;
use crate::error::{config_err, Error, Result};
use crate::float::Scalar;
use crate::model::checkpoint::{params_from_tensors, params_to_tensors, Container};
use crate::model::HourglassModel;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub unroll_steps: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    pub seed: u64,
    pub adam: AdamSettings,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            unroll_steps: 2,
            batch_size: 8,
            total_steps: 1000,
            seed: 0,
            adam: AdamSettings::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unroll_steps < 1 {
            return config_err("unroll steps must be at least 1");
        }
        if self.batch_size < 1 {
            return config_err("batch size must be at least 1");
        }
        if self.adam.learning_rate.is_nan() || self.adam.learning_rate < 0.0 {
            return config_err(format!("learning rate {} must be non-negative", self.adam.learning_rate));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let a = &self.adam;
        [
            ("unroll", self.unroll_steps.to_string()),
            ("batch", self.batch_size.to_string()),
            ("steps", self.total_steps.to_string()),
            ("seed", self.seed.to_string()),
            ("lr", a.learning_rate.to_string()),
            ("beta1", a.beta1.to_string()),
            ("beta2", a.beta2.to_string()),
            ("adam_eps", a.eps.to_string()),
            ("weight_decay", a.weight_decay.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Apply one `key=value` setting. Returns false for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || Error::Config(format!("bad value {value:?} for {key}"));
        let int = || value.trim().parse::<usize>().map_err(|_| bad());
        let real = || value.trim().parse::<f64>().map_err(|_| bad());
        match key {
            "unroll" => self.unroll_steps = int()?,
            "batch" => self.batch_size = int()?,
            "steps" => self.total_steps = int()?,
            "seed" => self.seed = value.trim().parse().map_err(|_| bad())?,
            "lr" => self.adam.learning_rate = real()?,
            "beta1" => self.adam.beta1 = real()?,
            "beta2" => self.adam.beta2 = real()?,
            "adam_eps" => self.adam.eps = real()?,
            "weight_decay" => self.adam.weight_decay = real()?,
            "checkpoint_every" => self.checkpoint_every = int()?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Loss of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Number of completed updates, starting at 1.
    pub step: usize,
    pub loss: f64,
    pub step_losses: Vec<f64>,
}

impl StepRecord {
    pub fn csv_line(&self) -> String {
        let mut s = format!("{},{:.9}", self.step, self.loss);
        for l in &self.step_losses {
            write!(s, ",{l:.9}").unwrap();
        }
        s
    }
}

pub fn csv_header(unroll_steps: usize) -> String {
    let mut s = "step,loss".to_string();
    for t in 1..=unroll_steps {
        write!(s, ",L{t}").unwrap();
    }
    s
}

/// Dataset indices for a given step. Epochs are walked through seeded
/// permutations, so the batch for any step can be recomputed from scratch.
pub fn batch_indices(seed: u64, step: usize, batch_size: usize, len: usize) -> Vec<usize> {
    let mut cached: Option<(usize, Vec<usize>)> = None;
    (0..batch_size)
        .map(|j| {
            let global = step * batch_size + j;
            let epoch = global / len;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                let mut perm: Vec<usize> = (0..len).collect();
                perm.shuffle(&mut rng::stream(seed, Purpose::DataOrder, &[epoch as u64]));
                cached = Some((epoch, perm));
            }
            cached.as_ref().unwrap().1[global % len]
        })
        .collect()
}

/// Owns the model and optimizer state across steps.
#[derive(Debug, Clone)]
pub struct Trainer<F> {
    model: HourglassModel<F>,
    config: TrainConfig,
    optimizer: AdamW<F>,
    step: usize,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(model: HourglassModel<F>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(config.adam, model.params());
        Ok(Self { model, config, optimizer, step: 0 })
    }

    pub fn model(&self) -> &HourglassModel<F> {
        &self.model
    }

    pub fn into_model(self) -> HourglassModel<F> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Extend or shorten the run; everything else stays fixed.
    pub fn set_total_steps(&mut self, steps: usize) {
        self.config.total_steps = steps;
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn check_dataset(&self, dataset: &LatentDataset) -> Result<()> {
        let cfg = self.model.config();
        if dataset.vocab() != cfg.vocab {
            return Err(Error::Config(format!(
                "dataset vocab {} does not match model vocab {}",
                dataset.vocab(),
                cfg.vocab
            )));
        }
        if dataset.grid_shape() != cfg.grid_shape {
            return Err(Error::Config(format!(
                "dataset grid {:?} does not match model grid {:?}",
                dataset.grid_shape(),
                cfg.grid_shape
            )));
        }
        match (cfg.class_count, dataset.labels()) {
            (Some(n), Some(_)) => dataset.check_labels(n),
            (Some(_), None) => config_err("class-conditional model needs a labeled dataset"),
            _ => Ok(()),
        }
    }

    /// One optimizer update on the next batch.
    pub fn train_step(&mut self, dataset: &LatentDataset) -> Result<StepRecord> {
        self.check_dataset(dataset)?;
        let cfg = &self.config;
        let seed = cfg.seed;
        let step = self.step as u64;
        let vocab = self.model.config().vocab;
        let conditional = self.model.config().class_count.is_some();
        let indices = batch_indices(seed, self.step, cfg.batch_size, dataset.len());
        let model = &self.model;
        let per_item: Vec<_> = indices
            .par_iter()
            .enumerate()
            .map(|(j, &idx)| {
                let z = &dataset.entries()[idx];
                let class = if conditional { dataset.labels().map(|l| l[idx] as usize) } else { None };
                let mut crng = rng::stream(seed, Purpose::Corruption, &[step, j as u64]);
                let z0 = corrupt(std::slice::from_ref(z), vocab, &mut crng).z0.remove(0);
                let mut urng = rng::stream(seed, Purpose::Unroll, &[step, j as u64]);
                let mut drng = rng::stream(seed, Purpose::Unroll, &[step, j as u64, 1]);
                let mut grads = model.params().zeros_like();
                let out = unrolled_loss(
                    model,
                    z,
                    &z0,
                    cfg.unroll_steps,
                    class,
                    &mut urng,
                    Some(&mut drng),
                    Some(&mut grads),
                )?;
                Ok((out, grads))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut iter = per_item.into_iter();
        let (first, mut grads) = iter.next().unwrap();
        let mut loss = first.loss;
        let mut step_losses = first.step_losses;
        for (out, g) in iter {
            grads.add_assign(&g);
            loss += out.loss;
            for (a, b) in step_losses.iter_mut().zip(&out.step_losses) {
                *a += b;
            }
        }
        let b = cfg.batch_size as f64;
        grads.scale(F::from_f64c(1.0 / b));
        self.optimizer.update(self.model.params_mut(), &grads);
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            loss: loss / b,
            step_losses: step_losses.into_iter().map(|l| l / b).collect(),
        })
    }

    /// Train until `total_steps`. `on_step` runs after every update and may
    /// write checkpoints or logs.
    pub fn run<C>(&mut self, dataset: &LatentDataset, mut on_step: C) -> Result<Vec<StepRecord>>
    where
        C: FnMut(&StepRecord, &Self) -> Result<()>,
    {
        let mut history = Vec::new();
        while self.step < self.config.total_steps {
            let rec = self.train_step(dataset)?;
            on_step(&rec, self)?;
            history.push(rec);
        }
        Ok(history)
    }

    /// Model, optimizer moments and step counter.
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.put_model(&self.model);
        for (k, v) in self.config.to_kv() {
            c.meta.insert(format!("train.{k}"), v);
        }
        c.meta.insert("train.completed".into(), self.step.to_string());
        c.meta.insert("train.adam_updates".into(), self.optimizer.updates.to_string());
        c.tensors.extend(params_to_tensors(&self.optimizer.first, "adam.m."));
        c.tensors.extend(params_to_tensors(&self.optimizer.second, "adam.v."));
        c
    }

    /// Resume from [`Self::to_container`] output. A model-only checkpoint
    /// starts fresh optimizer state with the given config.
    pub fn from_container(c: &Container, fallback: TrainConfig) -> Result<Self> {
        let model = c.get_model::<F>()?;
        if !c.meta.contains_key("train.completed") {
            return Self::new(model, fallback);
        }
        let mut config = TrainConfig::default();
        for (k, v) in &c.meta {
            if let Some(key) = k.strip_prefix("train.") {
                config.set(key, v)?;
            }
        }
        let parse = |key: &str| -> Result<u64> {
            c.meta[key].parse().map_err(|_| Error::Format(format!("bad {key} in checkpoint")))
        };
        let mut trainer = Self::new(model, config)?;
        trainer.step = parse("train.completed")? as usize;
        trainer.optimizer.updates = parse("train.adam_updates")?;
        params_from_tensors(c, "adam.m.", &mut trainer.optimizer.first)?;
        params_from_tensors(c, "adam.v.", &mut trainer.optimizer.second)?;
        Ok(trainer)
    }
}

/// Train a model from scratch to `config.total_steps`.
pub fn train<F: Scalar>(
    dataset: &LatentDataset,
    config: TrainConfig,
    model: HourglassModel<F>,
) -> Result<(HourglassModel<F>, Vec<StepRecord>)> {
    let mut trainer = Trainer::new(model, config)?;
    let history = trainer.run(dataset, |_, _| Ok(()))?;
    Ok((trainer.into_model(), history))
}
