//! Python bindings: codebooks, token datasets, the hourglass denoiser, training,
//! sampling, inpainting and the exact enumeration oracle.
//!
//! Images are nested lists of floats in `[0, 1]` (rows of pixels), token grids
//! are nested lists of ints, masks are nested lists of bools.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use sundae_core::codec::{self, io, ImageGrid, LatentMask, TokenGrid};
use sundae_core::model::checkpoint::{load_model, save_model};
use sundae_core::model::{HourglassConfig, HourglassModel};
use sundae_core::sampler::{self, SampleSchedule};
use sundae_core::train::{AdamSettings, TrainConfig};
use sundae_core::{oracle, train, Error};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn rect<T>(rows: &[Vec<T>], what: &str) -> PyResult<(usize, usize)> {
    let w = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err(format!("{what} must be a non-empty rectangular list of rows")));
    }
    Ok((rows.len(), w))
}

pub fn image_from_rows(rows: &[Vec<f32>]) -> PyResult<ImageGrid> {
    let (h, w) = rect(rows, "image")?;
    ImageGrid::new(h, w, 1, rows.concat()).map_err(err)
}

pub fn image_to_rows(image: &ImageGrid) -> Vec<Vec<f32>> {
    image.values().chunks(image.width() * image.channels()).map(<[f32]>::to_vec).collect()
}

pub fn grid_from_rows(rows: &[Vec<u16>]) -> PyResult<TokenGrid> {
    rect(rows, "token grid")?;
    TokenGrid::from_rows(rows).map_err(err)
}

pub fn grid_to_rows(grid: &TokenGrid) -> Vec<Vec<u16>> {
    grid.tokens().chunks(grid.width()).map(<[u16]>::to_vec).collect()
}

pub fn mask_from_rows(rows: &[Vec<bool>]) -> PyResult<LatentMask> {
    let (h, w) = rect(rows, "mask")?;
    LatentMask::new(h, w, rows.concat()).map_err(err)
}

fn to_images(rows: &[Vec<Vec<f32>>]) -> PyResult<Vec<ImageGrid>> {
    rows.iter().map(|r| image_from_rows(r)).collect()
}

#[pyclass(name = "Codebook", module = "sundae", skip_from_py_object)]
#[derive(Clone)]
pub struct PyCodebook {
    inner: codec::Codebook,
}

#[pymethods]
impl PyCodebook {
    /// Fit with k-means++ seeding and Lloyd iterations.
    #[staticmethod]
    #[pyo3(signature = (images, vocab, patch_size=2, seed=0))]
    fn fit(images: Vec<Vec<Vec<f32>>>, vocab: usize, patch_size: usize, seed: u64) -> PyResult<Self> {
        let imgs = to_images(&images)?;
        let fit = codec::fit_codebook(&imgs, vocab, patch_size, seed).map_err(err)?;
        Ok(Self { inner: fit.codebook })
    }

    /// One codeword per grey level on 1×1 patches.
    #[staticmethod]
    fn uniform_levels(levels: usize) -> PyResult<Self> {
        Ok(Self { inner: codec::Codebook::uniform_levels(levels).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::load_codebook(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_codebook(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn vocab(&self) -> usize {
        self.inner.vocab()
    }

    #[getter]
    fn patch_size(&self) -> usize {
        self.inner.patch_size()
    }

    fn encode(&self, image: Vec<Vec<f32>>) -> PyResult<Vec<Vec<u16>>> {
        let z = codec::encode_grid(&image_from_rows(&image)?, &self.inner).map_err(err)?;
        Ok(grid_to_rows(&z))
    }

    fn decode(&self, grid: Vec<Vec<u16>>) -> PyResult<Vec<Vec<f32>>> {
        let img = codec::decode_grid(&grid_from_rows(&grid)?, &self.inner).map_err(err)?;
        Ok(image_to_rows(&img))
    }

    fn __repr__(&self) -> String {
        format!("Codebook(vocab={}, patch_size={})", self.inner.vocab(), self.inner.patch_size())
    }
}

#[pyclass(name = "Dataset", module = "sundae", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: codec::LatentDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (vocab, grids, labels=None))]
    fn new(vocab: usize, grids: Vec<Vec<Vec<u16>>>, labels: Option<Vec<u16>>) -> PyResult<Self> {
        let entries = grids.iter().map(|g| grid_from_rows(g)).collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: codec::LatentDataset::new(vocab, entries, labels).map_err(err)? })
    }

    /// Encode images with `codebook`; `hflip` appends a mirrored copy of each.
    #[staticmethod]
    #[pyo3(signature = (images, codebook, hflip=false, labels=None))]
    fn build(
        images: Vec<Vec<Vec<f32>>>,
        codebook: &PyCodebook,
        hflip: bool,
        labels: Option<Vec<u16>>,
    ) -> PyResult<Self> {
        let imgs = to_images(&images)?;
        let ds = codec::build_latent_dataset(&imgs, &codebook.inner, hflip, labels.as_deref()).map_err(err)?;
        Ok(Self { inner: ds })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::load_dataset(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_dataset(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn vocab(&self) -> usize {
        self.inner.vocab()
    }

    #[getter]
    fn grid_shape(&self) -> (usize, usize) {
        self.inner.grid_shape()
    }

    fn grids(&self) -> Vec<Vec<Vec<u16>>> {
        self.inner.entries().iter().map(grid_to_rows).collect()
    }

    fn labels(&self) -> Option<Vec<u16>> {
        self.inner.labels().map(<[u16]>::to_vec)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Model", module = "sundae", skip_from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    inner: HourglassModel<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (vocab, height, width, dim=128, depths=(2, 4, 2), shorten=4, heads=4, classes=None, dropout=0.0, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        vocab: usize,
        height: usize,
        width: usize,
        dim: usize,
        depths: (usize, usize, usize),
        shorten: usize,
        heads: usize,
        classes: Option<usize>,
        dropout: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let config = HourglassConfig {
            vocab,
            grid_shape: (height, width),
            model_dim: dim,
            depths,
            shorten_factor: shorten,
            heads,
            class_count: classes,
            dropout,
            ..HourglassConfig::default()
        };
        Ok(Self { inner: HourglassModel::new(config, seed).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_model(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn vocab(&self) -> usize {
        self.inner.config().vocab
    }

    #[getter]
    fn grid_shape(&self) -> (usize, usize) {
        self.inner.config().grid_shape
    }

    /// Architecture as `key -> value` strings.
    fn config(&self) -> std::collections::BTreeMap<String, String> {
        self.inner.config().to_kv()
    }

    /// Logits with one row per grid position (row-major) and one column per token.
    #[pyo3(signature = (grid, label=None))]
    fn forward(&self, grid: Vec<Vec<u16>>, label: Option<usize>) -> PyResult<Vec<Vec<f32>>> {
        let logits = self.inner.forward(&grid_from_rows(&grid)?, label).map_err(err)?;
        Ok(logits.rows().into_iter().map(|r| r.to_vec()).collect())
    }
}

#[pyclass(name = "Trainer", module = "sundae")]
pub struct PyTrainer {
    inner: train::Trainer<f32>,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (model, steps, batch=8, unroll=2, lr=3e-4, weight_decay=0.01, seed=0))]
    fn new(
        model: &PyModel,
        steps: usize,
        batch: usize,
        unroll: usize,
        lr: f64,
        weight_decay: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let config = TrainConfig {
            unroll_steps: unroll,
            batch_size: batch,
            total_steps: steps,
            seed,
            adam: AdamSettings { learning_rate: lr, weight_decay, ..AdamSettings::default() },
            checkpoint_every: 0,
        };
        Ok(Self { inner: train::Trainer::new(model.inner.clone(), config).map_err(err)? })
    }

    /// One optimizer step; returns the mean unrolled loss per token.
    fn step(&mut self, dataset: &PyDataset) -> PyResult<f64> {
        Ok(self.inner.train_step(&dataset.inner).map_err(err)?.loss)
    }

    /// Run to the configured step count; returns the loss of every step taken.
    fn run(&mut self, dataset: &PyDataset) -> PyResult<Vec<f64>> {
        let history = self.inner.run(&dataset.inner, |_, _| Ok(())).map_err(err)?;
        Ok(history.iter().map(|r| r.loss).collect())
    }

    #[getter]
    fn steps_done(&self) -> usize {
        self.inner.steps_done()
    }

    fn model(&self) -> PyModel {
        PyModel { inner: self.inner.model().clone() }
    }
}

#[allow(clippy::too_many_arguments)]
fn schedule(
    steps: usize,
    min_steps: usize,
    temp: (f64, f64),
    proportion: f64,
    freeze: bool,
    seed: u64,
) -> SampleSchedule {
    SampleSchedule {
        max_steps: steps,
        min_steps,
        temp_start: temp.0,
        temp_end: temp.1,
        proportion,
        seed,
        freeze_enabled: freeze,
    }
}

type Rows = Vec<Vec<u16>>;

/// Draw `batch` grids. Returns `(grids, stop_steps)`; a stop step is `None`
/// when the item never froze.
#[pyfunction]
#[pyo3(signature = (model, batch, steps=100, min_steps=10, temp=(1.0, 0.6), proportion=0.8, freeze=true, seed=0, labels=None))]
#[allow(clippy::too_many_arguments)]
fn sample(
    py: Python<'_>,
    model: &PyModel,
    batch: usize,
    steps: usize,
    min_steps: usize,
    temp: (f64, f64),
    proportion: f64,
    freeze: bool,
    seed: u64,
    labels: Option<Vec<usize>>,
) -> PyResult<(Vec<Rows>, Vec<Option<usize>>)> {
    let s = schedule(steps, min_steps, temp, proportion, freeze, seed);
    let trace = py.detach(|| sampler::sample(&model.inner, &s, batch, labels.as_deref())).map_err(err)?;
    Ok((trace.final_grids().iter().map(grid_to_rows).collect(), trace.stop_steps.clone()))
}

/// Resample the cells set in `mask`, keeping every other cell of `grid`.
#[pyfunction]
#[pyo3(signature = (model, grid, mask, steps=100, min_steps=10, temp=(0.4, 0.4), proportion=0.8, freeze=true, seed=0, label=None))]
#[allow(clippy::too_many_arguments)]
fn inpaint(
    py: Python<'_>,
    model: &PyModel,
    grid: Vec<Vec<u16>>,
    mask: Vec<Vec<bool>>,
    steps: usize,
    min_steps: usize,
    temp: (f64, f64),
    proportion: f64,
    freeze: bool,
    seed: u64,
    label: Option<usize>,
) -> PyResult<Vec<Vec<u16>>> {
    let s = schedule(steps, min_steps, temp, proportion, freeze, seed);
    let z = grid_from_rows(&grid)?;
    let m = mask_from_rows(&mask)?;
    let trace = py.detach(|| sampler::inpaint_tokens(&model.inner, &z, &m, &s, label)).map_err(err)?;
    Ok(grid_to_rows(&trace.final_grids()[0]))
}

/// Exact distribution of the state after `steps` denoising steps from a
/// uniform start, indexed with the first position as the most significant digit.
#[pyfunction]
fn exact_marginal(model: &PyModel, steps: usize) -> PyResult<Vec<f64>> {
    oracle::exact_marginal(&model.inner, steps).map_err(err)
}

/// Exact distribution after `steps` steps from the flat state `start`.
#[pyfunction]
fn exact_transition(model: &PyModel, start: Vec<u16>, steps: usize) -> PyResult<Vec<f64>> {
    oracle::exact_transition(&model.inner, &start, steps).map_err(err)
}

#[pymodule]
fn sundae(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCodebook>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(inpaint, m)?)?;
    m.add_function(wrap_pyfunction!(exact_marginal, m)?)?;
    m.add_function(wrap_pyfunction!(exact_transition, m)?)?;
    Ok(())
}
