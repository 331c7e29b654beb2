use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sundae_core::codec::io::{load_codebook, load_dataset, load_pgm, save_codebook, save_dataset, save_pgm};
use sundae_core::codec::{self, build_latent_dataset, decode_grid, Codebook, ImageGrid, LatentDataset, PixelMask};
use sundae_core::eval::{corruption_loss, exact_nll_per_token, is_enumerable, marginal_tv, mean_stop_step, EvalReport};
use sundae_core::model::checkpoint::Container;
use sundae_core::model::HourglassModel;
use sundae_core::sampler;
use sundae_core::train::{csv_header, Trainer};

use crate::config::RunConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub const DIRECT_LEVELS: [usize; 4] = [2, 4, 16, 256];

fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| CliError::config(format!("missing required setting {key:?}")))
}

fn existing<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let path = require(value, key)?;
    if !path.exists() {
        return Err(CliError::missing_path(path));
    }
    Ok(path)
}

fn echo(cfg: &RunConfig) {
    eprint!("{}", cfg.render());
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::from_io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::from_io(path, e))
}

/// Every `.pgm` file in `dir`, ordered by file name.
fn load_images(dir: &Path) -> Result<Vec<ImageGrid>> {
    if !dir.is_dir() {
        return Err(CliError::config(format!("not a directory: {}", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::from_io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::new("dataset", 1, format!("no .pgm files in {}", dir.display())));
    }
    paths.iter().map(|p| load_pgm(p).map_err(CliError::from)).collect()
}

fn load_codec(cfg: &RunConfig) -> Result<Codebook> {
    match (cfg.direct_pixels, &cfg.codebook) {
        (Some(_), Some(_)) => Err(CliError::config("give either a codebook or direct_pixels, not both")),
        (Some(q), None) if DIRECT_LEVELS.contains(&q) => Ok(Codebook::uniform_levels(q)?),
        (Some(q), None) => Err(CliError::config(format!("direct_pixels must be one of {DIRECT_LEVELS:?}, got {q}"))),
        (None, Some(_)) => Ok(load_codebook(existing(&cfg.codebook, "codebook")?)?),
        (None, None) => Err(CliError::config("a codebook or direct_pixels is required")),
    }
}

fn load_container(path: &Path) -> Result<Container> {
    Ok(Container::load(path)?)
}

fn parse_labels(path: &Path, count: usize) -> Result<Vec<u16>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
    let labels = text
        .split_whitespace()
        .map(|t| t.parse::<u16>().map_err(|_| CliError::config(format!("bad label {t:?} in {}", path.display()))))
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != count {
        return Err(CliError::config(format!("{} labels for {} images in {}", labels.len(), count, path.display())));
    }
    Ok(labels)
}

fn check_class(model: &HourglassModel<f32>, class: Option<usize>) -> Result<()> {
    match (class, model.config().class_count) {
        (Some(_), None) => Err(CliError::config("class given but the checkpoint is unconditional")),
        (Some(c), Some(n)) if c >= n => Err(CliError::config(format!("class {c} >= class count {n}"))),
        _ => Ok(()),
    }
}

pub fn fit_codebook(cfg: RunConfig) -> Result<()> {
    echo(&cfg);
    let images = load_images(existing(&cfg.images, "images")?)?;
    let out = require(&cfg.out, "out")?;
    let fit = codec::fit_codebook(&images, cfg.model.vocab, cfg.patch, cfg.seed)?;
    save_codebook(&fit.codebook, out)?;
    println!(
        "vocab={} patch={} iterations={} inertia={:.9}",
        fit.codebook.vocab(),
        fit.codebook.patch_size(),
        fit.inertia_history.len(),
        fit.inertia()
    );
    Ok(())
}

pub fn build_dataset(cfg: RunConfig) -> Result<()> {
    echo(&cfg);
    let images = load_images(existing(&cfg.images, "images")?)?;
    let codebook = load_codec(&cfg)?;
    let labels = match &cfg.labels {
        Some(_) => Some(parse_labels(existing(&cfg.labels, "labels")?, images.len())?),
        None => None,
    };
    let out = require(&cfg.out, "out")?;
    let dataset = build_latent_dataset(&images, &codebook, cfg.hflip, labels.as_deref())?;
    save_dataset(&dataset, out)?;
    let (h, w) = dataset.grid_shape();
    println!("entries={} vocab={} grid={h}x{w}", dataset.len(), dataset.vocab());
    Ok(())
}

fn new_trainer(cfg: &RunConfig, dataset: &LatentDataset) -> Result<Trainer<f32>> {
    if let Some(path) = &cfg.resume {
        let c = load_container(existing(&Some(path.clone()), "resume")?)?;
        let model_cfg = c.model_config()?;
        if model_cfg.vocab != dataset.vocab() {
            return Err(CliError::vocab_mismatch("checkpoint", model_cfg.vocab, "dataset", dataset.vocab()));
        }
        let mut trainer = Trainer::from_container(&c, cfg.train.clone())?;
        if cfg.is_explicit("steps") {
            trainer.set_total_steps(cfg.train.total_steps);
        }
        return Ok(trainer);
    }
    let mut model_cfg = cfg.model.clone();
    if cfg.is_explicit("vocab") && model_cfg.vocab != dataset.vocab() {
        return Err(CliError::vocab_mismatch("model", model_cfg.vocab, "dataset", dataset.vocab()));
    }
    model_cfg.vocab = dataset.vocab();
    if cfg.is_explicit("grid") && model_cfg.grid_shape != dataset.grid_shape() {
        return Err(CliError::config(format!(
            "model grid {:?} does not match dataset grid {:?}",
            model_cfg.grid_shape,
            dataset.grid_shape()
        )));
    }
    model_cfg.grid_shape = dataset.grid_shape();
    if !cfg.is_explicit("classes") {
        model_cfg.class_count = dataset.class_count();
    }
    Ok(Trainer::new(HourglassModel::new(model_cfg, cfg.seed)?, cfg.train.clone())?)
}

/// Existing loss rows up to `completed`, or just the header.
fn loss_rows(path: &Path, header: &str, completed: usize) -> Vec<String> {
    let mut rows = vec![header.to_string()];
    if completed == 0 {
        return rows;
    }
    if let Ok(text) = fs::read_to_string(path) {
        rows.extend(
            text.lines()
                .skip(1)
                .filter(|l| l.split(',').next().and_then(|s| s.parse::<usize>().ok()).is_some_and(|s| s <= completed))
                .map(str::to_string),
        );
    }
    rows
}

pub fn train(mut cfg: RunConfig) -> Result<()> {
    let dataset = load_dataset(existing(&cfg.dataset, "dataset")?)?;
    let out = require(&cfg.out, "out")?.to_path_buf();
    let mut trainer = new_trainer(&cfg, &dataset)?;
    trainer.check_dataset(&dataset)?;
    cfg.model = trainer.model().config().clone();
    cfg.train = trainer.config().clone();
    echo(&cfg);
    create_dir(&out)?;

    let csv_path = out.join("loss.csv");
    let rows = loss_rows(&csv_path, &csv_header(cfg.train.unroll_steps), trainer.steps_done());
    let mut csv = fs::File::create(&csv_path).map_err(|e| CliError::from_io(&csv_path, e))?;
    for r in &rows {
        writeln!(csv, "{r}").map_err(|e| CliError::from_io(&csv_path, e))?;
    }

    let total = trainer.config().total_steps;
    let every = cfg.train.checkpoint_every;
    let report = (total / 10).max(1);
    let mut last = None;
    let mut failure = None;
    trainer.run(&dataset, |rec, t| {
        if let Err(e) = writeln!(csv, "{}", rec.csv_line()) {
            failure = Some(CliError::from_io(&csv_path, e));
        }
        if every > 0 && rec.step % every == 0 {
            csv.flush()?;
            t.to_container().save(&out.join(format!("ckpt_{:06}.hgck", rec.step)))?;
        }
        if rec.step % report == 0 {
            eprintln!("step {} loss {:.6}", rec.step, rec.loss);
        }
        last = Some(rec.loss);
        Ok(())
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    csv.flush().map_err(|e| CliError::from_io(&csv_path, e))?;
    trainer.to_container().save(&out.join("checkpoint.hgck"))?;
    match last {
        Some(l) => println!("steps={} final_loss={l:.6}", trainer.steps_done()),
        None => println!("steps={}", trainer.steps_done()),
    }
    Ok(())
}

fn load_model_and_codec(cfg: &RunConfig) -> Result<(HourglassModel<f32>, Codebook)> {
    let container = load_container(existing(&cfg.checkpoint, "checkpoint")?)?;
    let model: HourglassModel<f32> = container.get_model()?;
    let codebook = load_codec(cfg)?;
    if codebook.vocab() != model.config().vocab {
        return Err(CliError::vocab_mismatch("codebook", codebook.vocab(), "checkpoint", model.config().vocab));
    }
    check_class(&model, cfg.class)?;
    Ok((model, codebook))
}

pub fn sample(cfg: RunConfig) -> Result<()> {
    let (model, codebook) = load_model_and_codec(&cfg)?;
    let out = require(&cfg.out, "out")?.to_path_buf();
    echo(&cfg);
    let classes = cfg.class.map(|c| vec![c; cfg.sample_batch]);
    let trace = sampler::sample(&model, &cfg.sample, cfg.sample_batch, classes.as_deref())?;
    create_dir(&out)?;
    for (i, z) in trace.final_grids().iter().enumerate() {
        save_pgm(&decode_grid(z, &codebook)?, &out.join(format!("sample_{i:03}.pgm")))?;
    }
    write_text(&out.join("manifest.csv"), &trace.manifest_csv())?;
    if cfg.trace {
        let dir = out.join("trace");
        create_dir(&dir)?;
        for t in 0..=trace.last_step() {
            for (i, img) in sampler::decode_intermediate(&trace, t, &codebook)?.iter().enumerate() {
                save_pgm(img, &dir.join(format!("step_{t:03}_item_{i:03}.pgm")))?;
            }
        }
    }
    println!("samples={} steps={} mean_stop_step={:.3}", trace.batch(), trace.last_step(), mean_stop_step(&trace));
    Ok(())
}

pub fn inpaint(mut cfg: RunConfig) -> Result<()> {
    let (model, codebook) = load_model_and_codec(&cfg)?;
    let image = load_pgm(existing(&cfg.image, "image")?)?;
    let mask = PixelMask::from_image(&load_pgm(existing(&cfg.mask, "mask")?)?);
    let out = require(&cfg.out, "out")?.to_path_buf();
    if !cfg.is_explicit("temp") {
        let default = sampler::SampleSchedule::inpainting();
        cfg.sample.temp_start = default.temp_start;
        cfg.sample.temp_end = default.temp_end;
    }
    echo(&cfg);
    let result = sampler::inpaint(&model, &image, &mask, &codebook, &cfg.sample, cfg.class)?;
    save_pgm(&result, &out)?;
    println!("masked_pixels={}", mask.count());
    Ok(())
}

fn checkpoint_unroll(c: &Container) -> Option<usize> {
    c.meta.get("train.unroll").and_then(|v| v.parse().ok())
}

pub fn eval(mut cfg: RunConfig) -> Result<()> {
    let container = load_container(existing(&cfg.checkpoint, "checkpoint")?)?;
    let model: HourglassModel<f32> = container.get_model()?;
    let dataset = load_dataset(existing(&cfg.dataset, "dataset")?)?;
    if dataset.vocab() != model.config().vocab {
        return Err(CliError::vocab_mismatch("checkpoint", model.config().vocab, "dataset", dataset.vocab()));
    }
    if dataset.grid_shape() != model.config().grid_shape {
        return Err(CliError::config(format!(
            "dataset grid {:?} does not match model grid {:?}",
            dataset.grid_shape(),
            model.config().grid_shape
        )));
    }
    if !cfg.is_explicit("unroll") {
        if let Some(t) = checkpoint_unroll(&container) {
            cfg.train.unroll_steps = t;
        }
    }
    echo(&cfg);
    let steps = cfg.train.unroll_steps;
    let loss = corruption_loss(&model, &dataset, steps, cfg.draws, cfg.seed)?;
    let exact_nll =
        if is_enumerable(&model, steps) { Some(exact_nll_per_token(&model, &dataset, steps)?) } else { None };
    let (marginal, stop) = if cfg.eval_samples > 0 {
        let classes: Option<Vec<usize>> = match (cfg.class, model.config().class_count) {
            (Some(c), _) => Some(vec![c; cfg.eval_samples]),
            (None, Some(n)) => Some((0..cfg.eval_samples).map(|i| i % n).collect()),
            (None, None) => None,
        };
        check_class(&model, cfg.class)?;
        let trace = sampler::sample(&model, &cfg.sample, cfg.eval_samples, classes.as_deref())?;
        (Some(marginal_tv(trace.final_grids(), dataset.entries(), dataset.vocab())), Some(mean_stop_step(&trace)))
    } else {
        (None, None)
    };
    let report = EvalReport { loss, exact_nll, marginal_tv: marginal, mean_stop_step: stop };
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(out) = &cfg.out {
        write_text(out, &csv)?;
    }
    Ok(())
}
