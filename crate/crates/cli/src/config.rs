//! Flat `key=value` run configuration shared by every subcommand.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use sundae_core::model::HourglassConfig;
use sundae_core::sampler::SampleSchedule;
use sundae_core::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: HourglassConfig,
    pub train: TrainConfig,
    pub sample: SampleSchedule,
    pub images: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Quantize pixels to this many grey levels instead of using a codebook.
    pub direct_pixels: Option<usize>,
    pub patch: usize,
    pub hflip: bool,
    pub sample_batch: usize,
    pub class: Option<usize>,
    pub trace: bool,
    pub draws: usize,
    pub eval_samples: usize,
    /// Keys set by a config file or flag rather than left at their default.
    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: HourglassConfig::default(),
            train: TrainConfig::default(),
            sample: SampleSchedule::default(),
            images: None,
            dataset: None,
            codebook: None,
            checkpoint: None,
            resume: None,
            image: None,
            mask: None,
            labels: None,
            out: None,
            direct_pixels: None,
            patch: 2,
            hflip: false,
            sample_batch: 16,
            class: None,
            trace: false,
            draws: 256,
            eval_samples: 16,
            explicit: BTreeSet::new(),
        }
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn show_opt(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "none".into())
}

impl RunConfig {
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        let bad = || CliError::config(format!("bad value {value:?} for {key}"));
        let int = || value.parse::<usize>().map_err(|_| bad());
        let flag = || value.parse::<bool>().map_err(|_| bad());
        let opt_int = || if value == "none" || value.is_empty() { Ok(None) } else { int().map(Some) };
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "images" => self.images = opt_path(value),
            "dataset" => self.dataset = opt_path(value),
            "codebook" => self.codebook = opt_path(value),
            "checkpoint" => self.checkpoint = opt_path(value),
            "resume" => self.resume = opt_path(value),
            "image" => self.image = opt_path(value),
            "mask" => self.mask = opt_path(value),
            "labels" => self.labels = opt_path(value),
            "out" => self.out = opt_path(value),
            "direct_pixels" => self.direct_pixels = opt_int()?,
            "patch" => self.patch = int()?,
            "hflip" => self.hflip = flag()?,
            "sample_batch" => self.sample_batch = int()?,
            "class" => self.class = opt_int()?,
            "trace" => self.trace = flag()?,
            "draws" => self.draws = int()?,
            "eval_samples" => self.eval_samples = int()?,
            _ => {
                let owned =
                    self.model.set(key, value)? || self.train.set(key, value)? || self.sample.set(key, value)?;
                if !owned {
                    return Err(CliError::config(format!("unknown config key {key:?}")));
                }
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Apply a config file: `key=value` lines, `#` comments, blank lines.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("{origin}:{}: expected key=value, got {line:?}", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv = self.model.to_kv();
        kv.extend(self.train.to_kv());
        kv.extend(self.sample.to_kv());
        let own = [
            ("seed", self.seed.to_string()),
            ("images", show_path(&self.images)),
            ("dataset", show_path(&self.dataset)),
            ("codebook", show_path(&self.codebook)),
            ("checkpoint", show_path(&self.checkpoint)),
            ("resume", show_path(&self.resume)),
            ("image", show_path(&self.image)),
            ("mask", show_path(&self.mask)),
            ("labels", show_path(&self.labels)),
            ("out", show_path(&self.out)),
            ("direct_pixels", show_opt(self.direct_pixels)),
            ("patch", self.patch.to_string()),
            ("hflip", self.hflip.to_string()),
            ("sample_batch", self.sample_batch.to_string()),
            ("class", show_opt(self.class)),
            ("trace", self.trace.to_string()),
            ("draws", self.draws.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
        ];
        kv.extend(own.into_iter().map(|(k, v)| (k.to_string(), v)));
        kv
    }

    /// Config file text that reproduces this run.
    pub fn render(&self) -> String {
        let mut out = String::from("# effective config\n");
        for (k, v) in self.to_kv() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out.push_str("# end config\n");
        out
    }

    /// Seed-dependent parts of the sub-configs follow the run seed.
    pub fn sync_seed(&mut self) {
        self.train.seed = self.seed;
        self.sample.seed = self.seed;
    }
}
