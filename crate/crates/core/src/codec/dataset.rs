use super::codebook::{encode_grid, Codebook};
use super::grid::{ImageGrid, TokenGrid};
use crate::error::{shape_err, Error, Result};

/// Ordered token grids sharing one vocab and shape, optionally labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDataset {
    vocab: usize,
    grid_shape: (usize, usize),
    entries: Vec<TokenGrid>,
    labels: Option<Vec<u16>>,
}

impl LatentDataset {
    pub fn new(vocab: usize, entries: Vec<TokenGrid>, labels: Option<Vec<u16>>) -> Result<Self> {
        let first = entries.first().ok_or_else(|| Error::Dataset("dataset has no entries".into()))?;
        let grid_shape = first.shape();
        for e in &entries {
            if e.shape() != grid_shape {
                return shape_err(format!("entry shape {:?} differs from {:?}", e.shape(), grid_shape));
            }
            e.check_vocab(vocab)?;
        }
        if let Some(l) = &labels {
            if l.len() != entries.len() {
                return Err(Error::Dataset(format!("{} labels for {} entries", l.len(), entries.len())));
            }
        }
        Ok(Self { vocab, grid_shape, entries, labels })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        self.grid_shape
    }

    pub fn entries(&self) -> &[TokenGrid] {
        &self.entries
    }

    pub fn labels(&self) -> Option<&[u16]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of classes implied by the labels (max label + 1).
    pub fn class_count(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().map(|&c| c as usize + 1).max().unwrap_or(0))
    }

    pub fn check_labels(&self, class_count: usize) -> Result<()> {
        if let Some(l) = &self.labels {
            if let Some(&bad) = l.iter().find(|&&c| c as usize >= class_count) {
                return Err(Error::Config(format!("label {bad} >= class count {class_count}")));
            }
        }
        Ok(())
    }

    /// Split into the first `n` entries and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Self, Self)> {
        let take = |r: std::ops::Range<usize>| {
            Self::new(self.vocab, self.entries[r.clone()].to_vec(), self.labels.as_ref().map(|l| l[r].to_vec()))
        };
        Ok((take(0..n)?, take(n..self.len())?))
    }
}

/// Encode every image (and its mirror when `hflip`), in the order
/// original_0, flipped_0, original_1, ...
pub fn build_latent_dataset(
    images: &[ImageGrid],
    codebook: &Codebook,
    hflip: bool,
    labels: Option<&[u16]>,
) -> Result<LatentDataset> {
    let first = images.first().ok_or_else(|| Error::Dataset("empty image corpus".into()))?;
    if images.iter().any(|i| (i.height(), i.width(), i.channels()) != (first.height(), first.width(), first.channels()))
    {
        return shape_err("images in the corpus have different shapes");
    }
    if let Some(l) = labels {
        if l.len() != images.len() {
            return Err(Error::Dataset(format!("{} labels for {} images", l.len(), images.len())));
        }
    }
    let copies = if hflip { 2 } else { 1 };
    let mut entries = Vec::with_capacity(images.len() * copies);
    for img in images {
        entries.push(encode_grid(img, codebook)?);
        if hflip {
            entries.push(encode_grid(&img.hflip(), codebook)?);
        }
    }
    let labels = labels.map(|l| l.iter().flat_map(|&c| std::iter::repeat_n(c, copies)).collect());
    LatentDataset::new(codebook.vocab(), entries, labels)
}
