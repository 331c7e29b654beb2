use std::collections::BTreeMap;
use std::fmt;

use crate::error::{config_err, Result};

/// Architecture of the hourglass denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct HourglassConfig {
    pub vocab: usize,
    pub grid_shape: (usize, usize),
    pub model_dim: usize,
    /// Blocks before shortening, at the shortened level, and after upsampling.
    pub depths: (usize, usize, usize),
    /// Total shortening factor; each spatial axis shrinks by its square root.
    pub shorten_factor: usize,
    pub heads: usize,
    pub class_count: Option<usize>,
    pub mlp_ratio: usize,
    /// Residual-branch dropout probability, applied during training only.
    pub dropout: f64,
}

impl Default for HourglassConfig {
    fn default() -> Self {
        Self {
            vocab: 4,
            grid_shape: (16, 16),
            model_dim: 128,
            depths: (2, 4, 2),
            shorten_factor: 4,
            heads: 4,
            class_count: None,
            mlp_ratio: 4,
            dropout: 0.0,
        }
    }
}

pub(crate) fn int_sqrt(k: usize) -> Option<usize> {
    let r = (k as f64).sqrt().round() as usize;
    (r * r == k).then_some(r)
}

impl HourglassConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.grid_shape;
        if self.vocab < 2 || self.vocab > u16::MAX as usize {
            return config_err(format!("vocab {} must be in 2..=65535", self.vocab));
        }
        if h == 0 || w == 0 {
            return config_err("grid shape must be positive");
        }
        let Some(s) = int_sqrt(self.shorten_factor).filter(|s| *s > 0) else {
            return config_err(format!("shorten factor {} is not a perfect square", self.shorten_factor));
        };
        if h % s != 0 || w % s != 0 {
            return config_err(format!("grid {h}x{w} is not divisible by {s} (sqrt of shorten factor)"));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return config_err(format!("model dim {} not divisible by {} heads", self.model_dim, self.heads));
        }
        if self.head_dim() % 4 != 0 {
            return config_err(format!(
                "head dim {} must be divisible by 4 for two axial rotary banks",
                self.head_dim()
            ));
        }
        let (a, b, c) = self.depths;
        if a == 0 || b == 0 || c == 0 {
            return config_err("all depths must be at least 1");
        }
        if self.class_count == Some(0) {
            return config_err("class count must be positive when set");
        }
        if self.mlp_ratio == 0 {
            return config_err("mlp ratio must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return config_err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads.max(1)
    }

    pub fn positions(&self) -> usize {
        self.grid_shape.0 * self.grid_shape.1
    }

    /// Side length of one shortening block.
    pub fn block_side(&self) -> usize {
        int_sqrt(self.shorten_factor).unwrap_or(1)
    }

    pub fn short_grid(&self) -> (usize, usize) {
        let s = self.block_side();
        (self.grid_shape.0 / s, self.grid_shape.1 / s)
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("vocab".into(), self.vocab.to_string());
        m.insert("grid".into(), format!("{}x{}", self.grid_shape.0, self.grid_shape.1));
        m.insert("dim".into(), self.model_dim.to_string());
        m.insert("depth".into(), format!("{}-{}-{}", self.depths.0, self.depths.1, self.depths.2));
        m.insert("shorten".into(), self.shorten_factor.to_string());
        m.insert("heads".into(), self.heads.to_string());
        m.insert("classes".into(), self.class_count.map_or("none".into(), |c| c.to_string()));
        m.insert("mlp_ratio".into(), self.mlp_ratio.to_string());
        m.insert("dropout".into(), self.dropout.to_string());
        m
    }

    /// Inverse of [`Self::to_kv`]; unknown keys are ignored, missing keys keep defaults.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in kv {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key=value` setting. Returns false for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || crate::Error::Config(format!("bad value {value:?} for {key}"));
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
        match key {
            "vocab" => self.vocab = num(value)?,
            "grid" => {
                let (a, b) = value.split_once('x').ok_or_else(bad)?;
                self.grid_shape = (num(a)?, num(b)?);
            }
            "dim" => self.model_dim = num(value)?,
            "depth" => {
                let parts = value.split('-').map(num).collect::<Result<Vec<_>>>()?;
                let [a, b, c] = parts[..] else { return Err(bad()) };
                self.depths = (a, b, c);
            }
            "shorten" => self.shorten_factor = num(value)?,
            "heads" => self.heads = num(value)?,
            "classes" => self.class_count = if value == "none" { None } else { Some(num(value)?) },
            "mlp_ratio" => self.mlp_ratio = num(value)?,
            "dropout" => self.dropout = value.trim().parse().map_err(|_| bad())?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl fmt::Display for HourglassConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.to_kv().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = HourglassConfig { class_count: Some(10), ..Default::default() };
        cfg.validate().unwrap();
        assert_eq!(HourglassConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_shapes() {
        let base = HourglassConfig::default();
        for bad in [
            HourglassConfig { shorten_factor: 2, ..base.clone() },
            HourglassConfig { grid_shape: (6, 8), shorten_factor: 16, ..base.clone() },
            HourglassConfig { model_dim: 24, heads: 4, ..base.clone() },
            HourglassConfig { model_dim: 12, heads: 2, ..base.clone() },
            HourglassConfig { depths: (1, 0, 1), ..base.clone() },
            HourglassConfig { vocab: 1, ..base.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad}");
        }
    }
}
