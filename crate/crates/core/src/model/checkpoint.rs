//! Self-describing checkpoint container.
//!
//! Layout (little-endian): magic `HGCK`, u32 version, u32 metadata length,
//! metadata as UTF-8 `key=value` lines, u32 tensor count, then per tensor a
//! u32 name length, the UTF-8 name, u32 rows, u32 cols and `rows * cols`
//! f32 values in row-major order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::config::HourglassConfig;
use super::hourglass::HourglassModel;
use super::params::HourglassParams;
use crate::codec::io::Reader;
use crate::error::{Error, Result};
use crate::float::Scalar;

const MAGIC: &[u8; 4] = b"HGCK";
const VERSION: u32 = 1;
const MODEL_PREFIX: &str = "model.";
const PARAM_PREFIX: &str = "param.";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Array2<f32>)>,
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Format(format!("metadata entry {k:?} cannot be encoded")));
            }
            meta.push_str(&format!("{k}={v}\n"));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(meta_len)?).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let mut meta = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("bad metadata line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name =
                String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let data = (0..rows * cols).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, Array2::from_shape_vec((rows, cols), data).unwrap()));
        }
        r.finish()?;
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn tensor(&self, name: &str) -> Option<&Array2<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Add the model's config and parameters.
    pub fn put_model<F: Scalar>(&mut self, model: &HourglassModel<F>) {
        for (k, v) in model.config().to_kv() {
            self.meta.insert(format!("{MODEL_PREFIX}{k}"), v);
        }
        let params = model.params().cast::<f32>();
        for (name, t) in params.tensors() {
            self.tensors.push((format!("{PARAM_PREFIX}{name}"), t.clone()));
        }
    }

    pub fn model_config(&self) -> Result<HourglassConfig> {
        let kv: BTreeMap<String, String> = self
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(MODEL_PREFIX).map(|k| (k.to_string(), v.clone())))
            .collect();
        if kv.is_empty() {
            return Err(Error::Format("checkpoint holds no model config".into()));
        }
        HourglassConfig::from_kv(&kv)
    }

    pub fn get_model<F: Scalar>(&self) -> Result<HourglassModel<F>> {
        let config = self.model_config()?;
        let mut params = HourglassModel::<f32>::new(config.clone(), 0)?.into_params();
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let t = self
                .tensor(&format!("{PARAM_PREFIX}{name}"))
                .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))?;
            if t.dim() != slot.dim() {
                return Err(Error::Format(format!("tensor {name} has shape {:?}, expected {:?}", t.dim(), slot.dim())));
            }
            slot.assign(t);
        }
        HourglassModel::from_params(config, params.cast::<F>())
    }
}

pub fn save_model<F: Scalar>(model: &HourglassModel<F>, path: &Path) -> Result<()> {
    let mut c = Container::default();
    c.put_model(model);
    c.save(path)
}

pub fn load_model<F: Scalar>(path: &Path) -> Result<HourglassModel<F>> {
    Container::load(path)?.get_model()
}

/// Named f32 tensors for an arbitrary parameter set, with a name prefix.
pub fn params_to_tensors<F: Scalar>(params: &HourglassParams<F>, prefix: &str) -> Vec<(String, Array2<f32>)> {
    params.cast::<f32>().tensors().into_iter().map(|(n, t)| (format!("{prefix}{n}"), t.clone())).collect()
}

/// Fill `params` from tensors named `prefix + name`.
pub fn params_from_tensors<F: Scalar>(
    container: &Container,
    prefix: &str,
    params: &mut HourglassParams<F>,
) -> Result<()> {
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let t = container
            .tensor(&format!("{prefix}{name}"))
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {prefix}{name}")))?;
        if t.dim() != slot.dim() {
            return Err(Error::Format(format!("tensor {prefix}{name} has mismatched shape")));
        }
        slot.assign(&t.mapv(|v| F::from_f64c(v as f64)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> HourglassConfig {
        HourglassConfig {
            vocab: 5,
            grid_shape: (4, 4),
            model_dim: 8,
            depths: (1, 1, 1),
            shorten_factor: 4,
            heads: 2,
            class_count: Some(3),
            ..Default::default()
        }
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let model = HourglassModel::<f32>::new(tiny(), 9).unwrap();
        let mut c = Container::default();
        c.put_model(&model);
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        let loaded: HourglassModel<f32> = back.get_model().unwrap();
        assert_eq!(loaded.params(), model.params());
        assert_eq!(loaded.config(), model.config());
        assert_eq!(Container::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncated_or_foreign_files_fail() {
        let model = HourglassModel::<f32>::new(tiny(), 1).unwrap();
        let mut c = Container::default();
        c.put_model(&model);
        let bytes = c.to_bytes().unwrap();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Container::from_bytes(b"CBK1").is_err());
        assert!(Container::default().get_model::<f32>().is_err());
    }
}
