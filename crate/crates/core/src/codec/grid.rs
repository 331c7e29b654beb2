use crate::error::{shape_err, Error, Result};

/// A continuous image, row-major with interleaved channels, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return shape_err("image dimensions must be positive");
        }
        if values.len() != height * width * channels {
            return shape_err(format!(
                "image buffer has {} values, expected {}x{}x{}",
                values.len(),
                height,
                width,
                channels
            ));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::NonFinite(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, channels, values })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, 1, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.values[(row * self.width + col) * self.channels + channel]
    }

    /// Mirror left to right.
    pub fn hflip(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.height {
            for c in (0..self.width).rev() {
                let at = (r * self.width + c) * self.channels;
                values.extend_from_slice(&self.values[at..at + self.channels]);
            }
        }
        Self { values, ..*self }
    }

    pub(crate) fn check_patch_divisible(&self, patch: usize) -> Result<()> {
        if patch == 0 || self.height % patch != 0 || self.width % patch != 0 {
            return shape_err(format!("image {}x{} is not divisible by patch size {}", self.height, self.width, patch));
        }
        Ok(())
    }

    /// Flattened f x f patch at patch coordinates (pr, pc), ordered (row, col, channel).
    pub(crate) fn patch(&self, patch: usize, pr: usize, pc: usize, out: &mut Vec<f32>) {
        out.clear();
        for dr in 0..patch {
            let row = pr * patch + dr;
            let start = (row * self.width + pc * patch) * self.channels;
            out.extend_from_slice(&self.values[start..start + patch * self.channels]);
        }
    }
}

/// An h x w grid of codeword indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    height: usize,
    width: usize,
    tokens: Vec<u16>,
}

impl TokenGrid {
    pub fn new(height: usize, width: usize, tokens: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return shape_err("token grid dimensions must be positive");
        }
        if tokens.len() != height * width {
            return shape_err(format!("token buffer has {} entries, expected {}x{}", tokens.len(), height, width));
        }
        Ok(Self { height, width, tokens })
    }

    pub fn from_rows(rows: &[Vec<u16>]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return shape_err("ragged token rows");
        }
        Self::new(height, width, rows.concat())
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, tokens: vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[u16] {
        &self.tokens
    }

    pub fn tokens_mut(&mut self) -> &mut [u16] {
        &mut self.tokens
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.tokens[row * self.width + col]
    }

    pub fn check_vocab(&self, vocab: usize) -> Result<()> {
        match self.tokens.iter().find(|&&t| t as usize >= vocab) {
            Some(&t) => Err(Error::Vocab { token: t as usize, vocab }),
            None => Ok(()),
        }
    }
}

/// Binary mask; `true` marks cells to regenerate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return shape_err(format!("mask buffer has {} cells, expected {}x{}", cells.len(), height, width));
        }
        Ok(Self { height, width, cells })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self { height, width, cells: vec![value; height * width] }
    }

    /// Mask from a grayscale image: pixels >= 0.5 are set.
    pub fn from_image(image: &ImageGrid) -> Self {
        let cells = (0..image.height() * image.width()).map(|p| image.values()[p * image.channels()] >= 0.5).collect();
        Self { height: image.height(), width: image.width(), cells }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }
}

pub type PixelMask = Mask;
pub type LatentMask = Mask;

/// Latent cell is set iff every pixel of its f x f patch is set.
pub fn mask_downsample(mask: &PixelMask, patch_size: usize) -> Result<LatentMask> {
    if patch_size == 0 || mask.height % patch_size != 0 || mask.width % patch_size != 0 {
        return shape_err(format!("mask {}x{} is not divisible by patch size {}", mask.height, mask.width, patch_size));
    }
    let (h, w) = (mask.height / patch_size, mask.width / patch_size);
    let mut cells = Vec::with_capacity(h * w);
    for pr in 0..h {
        for pc in 0..w {
            let all = (0..patch_size)
                .all(|dr| (0..patch_size).all(|dc| mask.get(pr * patch_size + dr, pc * patch_size + dc)));
            cells.push(all);
        }
    }
    Ok(Mask { height: h, width: w, cells })
}
