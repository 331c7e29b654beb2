//! Iterative sampling from a uniform prior, with temperature annealing,
//! partial updates, per-item freezing, and masked inpainting.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::codec::{decode_grid, encode_grid, mask_downsample, Codebook, ImageGrid, LatentMask, PixelMask, TokenGrid};
use crate::error::{config_err, shape_err, Error, Result};
use crate::float::Scalar;
use crate::model::HourglassModel;
use crate::rng::{stream, Purpose, StreamRng};
use crate::train::sample_rows;

/// Anything that maps a token grid to per-position logits.
pub trait Denoiser: Sync {
    fn vocab(&self) -> usize;
    fn grid_shape(&self) -> (usize, usize);
    fn logits(&self, tokens: &TokenGrid, class: Option<usize>) -> Result<Array2<f64>>;
}

impl<F: Scalar> Denoiser for HourglassModel<F> {
    fn vocab(&self) -> usize {
        self.config().vocab
    }

    fn grid_shape(&self) -> (usize, usize) {
        self.config().grid_shape
    }

    fn logits(&self, tokens: &TokenGrid, class: Option<usize>) -> Result<Array2<f64>> {
        Ok(self.forward(tokens, class)?.mapv(|v| v.to_f64c()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSchedule {
    pub max_steps: usize,
    pub min_steps: usize,
    pub temp_start: f64,
    pub temp_end: f64,
    pub proportion: f64,
    pub seed: u64,
    pub freeze_enabled: bool,
}

impl Default for SampleSchedule {
    fn default() -> Self {
        Self {
            max_steps: 100,
            min_steps: 10,
            temp_start: 1.0,
            temp_end: 0.6,
            proportion: 0.8,
            seed: 0,
            freeze_enabled: true,
        }
    }
}

impl SampleSchedule {
    /// Default schedule for inpainting: constant temperature 0.4.
    pub fn inpainting() -> Self {
        Self { temp_start: 0.4, temp_end: 0.4, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return config_err("max_steps must be positive");
        }
        if self.min_steps > self.max_steps {
            return config_err(format!("min_steps {} exceeds max_steps {}", self.min_steps, self.max_steps));
        }
        if !(self.temp_end > 0.0 && self.temp_start >= self.temp_end && self.temp_start.is_finite()) {
            return config_err(format!(
                "temperatures must satisfy start >= end > 0, got {}:{}",
                self.temp_start, self.temp_end
            ));
        }
        if !(self.proportion > 0.0 && self.proportion <= 1.0) {
            return config_err(format!("proportion must be in (0, 1], got {}", self.proportion));
        }
        Ok(())
    }

    /// Keys used in run configs; the seed is owned by the run.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        [
            ("sample_steps", self.max_steps.to_string()),
            ("min_steps", self.min_steps.to_string()),
            ("temp", format!("{}:{}", self.temp_start, self.temp_end)),
            ("proportion", self.proportion.to_string()),
            ("freeze", self.freeze_enabled.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Apply one `key=value` setting. Returns false for keys this schedule
    /// does not own. `temp` takes `start:end` or a single constant.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || Error::Config(format!("bad value {value:?} for {key}"));
        let value = value.trim();
        match key {
            "sample_steps" => self.max_steps = value.parse().map_err(|_| bad())?,
            "min_steps" => self.min_steps = value.parse().map_err(|_| bad())?,
            "proportion" => self.proportion = value.parse().map_err(|_| bad())?,
            "freeze" => self.freeze_enabled = value.parse().map_err(|_| bad())?,
            "temp" => {
                let (a, b) = value.split_once(':').unwrap_or((value, value));
                self.temp_start = a.trim().parse().map_err(|_| bad())?;
                self.temp_end = b.trim().parse().map_err(|_| bad())?;
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Temperature used at step `t` (1-based).
    pub fn temperature(&self, t: usize) -> f64 {
        if self.max_steps <= 1 {
            return self.temp_start;
        }
        let frac = (t.saturating_sub(1)) as f64 / (self.max_steps - 1) as f64;
        self.temp_start + (self.temp_end - self.temp_start) * frac
    }

    /// Number of positions rewritten per step out of `eligible`.
    pub fn subset_size(&self, eligible: usize) -> usize {
        ((self.proportion * eligible as f64).ceil() as usize).min(eligible)
    }
}

/// Every intermediate grid of a sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    /// `steps[t][item]` is `z_t`; `steps[0]` is the prior draw.
    pub steps: Vec<Vec<TokenGrid>>,
    /// Step at which each item froze, if it did.
    pub stop_steps: Vec<Option<usize>>,
}

impl SampleTrace {
    pub fn batch(&self) -> usize {
        self.stop_steps.len()
    }

    /// Index of the last recorded step.
    pub fn last_step(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn final_grids(&self) -> &[TokenGrid] {
        &self.steps[self.last_step()]
    }

    /// Stop step with unfrozen items counted as the number of steps run.
    pub fn effective_stop_steps(&self) -> Vec<usize> {
        self.stop_steps.iter().map(|s| s.unwrap_or(self.last_step())).collect()
    }

    /// One line per item: `item,stop_step` (empty when it never froze).
    pub fn manifest_csv(&self) -> String {
        let mut out = String::from("item,stop_step\n");
        for (i, s) in self.stop_steps.iter().enumerate() {
            match s {
                Some(s) => out.push_str(&format!("{i},{s}\n")),
                None => out.push_str(&format!("{i},\n")),
            }
        }
        out
    }
}

struct Chain {
    current: TokenGrid,
    /// Positions that may be rewritten.
    eligible: Vec<usize>,
    class: Option<usize>,
    rng: StreamRng,
    stop: Option<usize>,
}

impl Chain {
    fn step<D: Denoiser + ?Sized>(&mut self, model: &D, schedule: &SampleSchedule, t: usize) -> Result<()> {
        if self.stop.is_some() {
            return Ok(());
        }
        let logits = model.logits(&self.current, self.class)?;
        let candidates = sample_rows(&logits, schedule.temperature(t), &mut self.rng);
        let amount = schedule.subset_size(self.eligible.len());
        let mut next = self.current.clone();
        for pick in index::sample(&mut self.rng, self.eligible.len(), amount) {
            let pos = self.eligible[pick];
            next.tokens_mut()[pos] = candidates[pos];
        }
        if schedule.freeze_enabled && t > schedule.min_steps && next == self.current {
            self.stop = Some(t);
        }
        self.current = next;
        Ok(())
    }
}

fn run_chains<D: Denoiser + ?Sized>(
    model: &D,
    schedule: &SampleSchedule,
    mut chains: Vec<Chain>,
) -> Result<SampleTrace> {
    let mut steps = vec![chains.iter().map(|c| c.current.clone()).collect::<Vec<_>>()];
    for t in 1..=schedule.max_steps {
        if chains.iter().all(|c| c.stop.is_some()) {
            break;
        }
        chains.par_iter_mut().map(|c| c.step(model, schedule, t)).collect::<Result<Vec<()>>>()?;
        steps.push(chains.iter().map(|c| c.current.clone()).collect());
    }
    Ok(SampleTrace { steps, stop_steps: chains.iter().map(|c| c.stop).collect() })
}

fn check_class(classes: Option<&[usize]>, batch: usize) -> Result<()> {
    match classes {
        Some(c) if c.len() != batch => shape_err(format!("{} class labels for a batch of {}", c.len(), batch)),
        _ => Ok(()),
    }
}

/// Draw `batch` samples. Item `i` uses the stream `(seed, Sampling, i)`.
pub fn sample<D: Denoiser + ?Sized>(
    model: &D,
    schedule: &SampleSchedule,
    batch: usize,
    classes: Option<&[usize]>,
) -> Result<SampleTrace> {
    schedule.validate()?;
    check_class(classes, batch)?;
    let (h, w) = model.grid_shape();
    let v = model.vocab();
    let chains = (0..batch)
        .map(|i| {
            let mut rng = stream(schedule.seed, Purpose::Sampling, &[i as u64]);
            let tokens = (0..h * w).map(|_| rng.gen_range(0..v) as u16).collect();
            Ok(Chain {
                current: TokenGrid::new(h, w, tokens)?,
                eligible: (0..h * w).collect(),
                class: classes.map(|c| c[i]),
                rng,
                stop: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_chains(model, schedule, chains)
}

/// Resample only the cells set in `mask`; every other cell keeps its value
/// from `tokens` at every step.
pub fn inpaint_tokens<D: Denoiser + ?Sized>(
    model: &D,
    tokens: &TokenGrid,
    mask: &LatentMask,
    schedule: &SampleSchedule,
    class: Option<usize>,
) -> Result<SampleTrace> {
    schedule.validate()?;
    if tokens.shape() != model.grid_shape() {
        return shape_err(format!("grid {:?} does not match model grid {:?}", tokens.shape(), model.grid_shape()));
    }
    if (mask.height(), mask.width()) != tokens.shape() {
        return shape_err(format!(
            "latent mask {}x{} does not match grid {:?}",
            mask.height(),
            mask.width(),
            tokens.shape()
        ));
    }
    tokens.check_vocab(model.vocab())?;
    let mut rng = stream(schedule.seed, Purpose::Sampling, &[0]);
    let mut current = tokens.clone();
    let eligible: Vec<usize> = mask.cells().iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect();
    for &pos in &eligible {
        current.tokens_mut()[pos] = rng.gen_range(0..model.vocab()) as u16;
    }
    run_chains(model, schedule, vec![Chain { current, eligible, class, rng, stop: None }])
}

/// Inpaint the pixels set in `pixel_mask`. A latent cell is resampled only if
/// its whole patch is masked.
pub fn inpaint<D: Denoiser + ?Sized>(
    model: &D,
    image: &ImageGrid,
    pixel_mask: &PixelMask,
    codebook: &Codebook,
    schedule: &SampleSchedule,
    class: Option<usize>,
) -> Result<ImageGrid> {
    if (pixel_mask.height(), pixel_mask.width()) != (image.height(), image.width()) {
        return shape_err(format!(
            "mask {}x{} does not match image {}x{}",
            pixel_mask.height(),
            pixel_mask.width(),
            image.height(),
            image.width()
        ));
    }
    let z = encode_grid(image, codebook)?;
    let mask = mask_downsample(pixel_mask, codebook.patch_size())?;
    let trace = inpaint_tokens(model, &z, &mask, schedule, class)?;
    decode_grid(&trace.final_grids()[0], codebook)
}

/// Decode every item's grid at `step`.
pub fn decode_intermediate(trace: &SampleTrace, step: usize, codebook: &Codebook) -> Result<Vec<ImageGrid>> {
    if step > trace.last_step() {
        return shape_err(format!("step {step} is past the last recorded step {}", trace.last_step()));
    }
    trace.steps[step].iter().map(|z| decode_grid(z, codebook)).collect()
}
