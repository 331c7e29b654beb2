use std::collections::HashSet;

use rand::Rng;

use super::grid::{ImageGrid, TokenGrid};
use crate::error::{shape_err, Error, Result};
use crate::rng::{self, Purpose};

/// Lloyd iteration cap.
pub const KMEANS_MAX_ITERS: usize = 50;
/// Relative inertia change below which Lloyd iterations stop.
pub const KMEANS_REL_TOL: f64 = 1e-6;

/// `vocab` codewords, each a flattened f x f x channels patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    vocab: usize,
    patch_size: usize,
    channels: usize,
    codewords: Vec<f32>,
}

impl Codebook {
    pub fn new(vocab: usize, patch_size: usize, channels: usize, codewords: Vec<f32>) -> Result<Self> {
        if vocab == 0 || patch_size == 0 || channels == 0 {
            return Err(Error::Config("codebook dimensions must be positive".into()));
        }
        if vocab > u16::MAX as usize {
            return Err(Error::Format(format!("vocab {vocab} exceeds u16 token storage")));
        }
        let dim = patch_size * patch_size * channels;
        if codewords.len() != vocab * dim {
            return shape_err(format!("codebook buffer has {} values, expected {}x{}", codewords.len(), vocab, dim));
        }
        if codewords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codeword entry".into()));
        }
        Ok(Self { vocab, patch_size, channels, codewords })
    }

    /// Per-pixel codebook with `levels` evenly spaced gray values, so that
    /// quantized pixels are their own tokens.
    pub fn uniform_levels(levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(Error::Config("need at least two gray levels".into()));
        }
        let codewords = (0..levels).map(|k| k as f32 / (levels - 1) as f32).collect();
        Self::new(levels, 1, 1, codewords)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn codewords(&self) -> &[f32] {
        &self.codewords
    }

    pub fn codeword(&self, index: usize) -> &[f32] {
        let d = self.patch_dim();
        &self.codewords[index * d..(index + 1) * d]
    }

    /// Nearest codeword by Euclidean distance, ties to the lowest index.
    /// Returns `(index, squared distance)`.
    pub fn nearest(&self, patch: &[f32]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.vocab {
            let d = sq_dist(patch, self.codeword(k));
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    fn check_image(&self, image: &ImageGrid) -> Result<()> {
        if image.channels() != self.channels {
            return shape_err(format!("image has {} channels, codebook expects {}", image.channels(), self.channels));
        }
        image.check_patch_divisible(self.patch_size)
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

/// Every f x f patch of every image, flattened, in image then raster order.
pub fn extract_patches(images: &[ImageGrid], patch_size: usize) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::new();
    let mut buf = Vec::new();
    for img in images {
        img.check_patch_divisible(patch_size)?;
        if img.channels() != images[0].channels() {
            return shape_err("images have mixed channel counts");
        }
        for pr in 0..img.height() / patch_size {
            for pc in 0..img.width() / patch_size {
                img.patch(patch_size, pr, pc, &mut buf);
                out.push(buf.clone());
            }
        }
    }
    Ok(out)
}

/// k-means++ seeding: first center uniform, each next one drawn with
/// probability proportional to squared distance from the nearest chosen center.
pub fn kmeans_plus_plus_init<R: Rng>(points: &[Vec<f32>], k: usize, rng: &mut R) -> Vec<Vec<f32>> {
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total <= 0.0 {
            break;
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // Guard against rounding landing on an already chosen point.
            if dist[chosen] == 0.0 {
                chosen = dist.iter().rposition(|d| *d > 0.0).unwrap();
            }
            chosen
        };
        centers.push(points[next].clone());
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// Outcome of a codebook fit, with the inertia measured after every
/// assignment step.
#[derive(Debug, Clone)]
pub struct CodebookFit {
    pub codebook: Codebook,
    pub inertia_history: Vec<f64>,
}

impl CodebookFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap()
    }
}

/// Fit a patch codebook with k-means (k-means++ seeding, Lloyd iterations).
pub fn fit_codebook(images: &[ImageGrid], vocab: usize, patch_size: usize, seed: u64) -> Result<CodebookFit> {
    if images.is_empty() {
        return Err(Error::Fit("empty image corpus".into()));
    }
    if vocab == 0 {
        return Err(Error::Fit("vocab must be positive".into()));
    }
    let points = extract_patches(images, patch_size)?;
    let distinct: HashSet<Vec<u32>> = points.iter().map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
    if distinct.len() < vocab {
        return Err(Error::Fit(format!("corpus has {} distinct patches, fewer than vocab {}", distinct.len(), vocab)));
    }
    let mut rng = rng::stream(seed, Purpose::KMeans, &[]);
    let init = kmeans_plus_plus_init(&points, vocab, &mut rng);
    let (centers, inertia_history) = lloyd(&points, init);
    let codebook = Codebook::new(vocab, patch_size, images[0].channels(), centers.concat())?;
    Ok(CodebookFit { codebook, inertia_history })
}

fn assign(points: &[Vec<f32>], centers: &[Vec<f32>]) -> (Vec<usize>, Vec<f64>) {
    points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (k, c) in centers.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (k, d);
                }
            }
            best
        })
        .unzip()
}

fn lloyd(points: &[Vec<f32>], mut centers: Vec<Vec<f32>>) -> (Vec<Vec<f32>>, Vec<f64>) {
    let dim = points[0].len();
    let mut history = Vec::new();
    let (mut labels, mut dists) = assign(points, &centers);
    history.push(dists.iter().sum::<f64>() / points.len() as f64);
    for _ in 0..KMEANS_MAX_ITERS {
        let mut sums = vec![vec![0.0f64; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += *v as f64;
            }
        }
        for k in 0..centers.len() {
            if counts[k] > 0 {
                centers[k] = sums[k].iter().map(|s| (s / counts[k] as f64) as f32).collect();
            } else {
                // Empty cluster: move it onto the worst-served point.
                let (far, _) =
                    dists.iter().enumerate().fold((0, -1.0), |acc, (i, d)| if *d > acc.1 { (i, *d) } else { acc });
                centers[k] = points[far].clone();
                dists[far] = 0.0;
            }
        }
        (labels, dists) = assign(points, &centers);
        let inertia = dists.iter().sum::<f64>() / points.len() as f64;
        let prev = *history.last().unwrap();
        history.push(inertia);
        if prev <= 0.0 || (prev - inertia).abs() / prev < KMEANS_REL_TOL {
            break;
        }
    }
    (centers, history)
}

/// Map each patch to its nearest codeword.
pub fn encode_grid(image: &ImageGrid, codebook: &Codebook) -> Result<TokenGrid> {
    codebook.check_image(image)?;
    let f = codebook.patch_size();
    let (h, w) = (image.height() / f, image.width() / f);
    let mut tokens = Vec::with_capacity(h * w);
    let mut buf = Vec::new();
    for pr in 0..h {
        for pc in 0..w {
            image.patch(f, pr, pc, &mut buf);
            tokens.push(codebook.nearest(&buf).0 as u16);
        }
    }
    TokenGrid::new(h, w, tokens)
}

/// Paste codeword patches back into an image.
pub fn decode_grid(tokens: &TokenGrid, codebook: &Codebook) -> Result<ImageGrid> {
    tokens.check_vocab(codebook.vocab())?;
    let f = codebook.patch_size();
    let ch = codebook.channels();
    let (height, width) = (tokens.height() * f, tokens.width() * f);
    let mut values = vec![0.0f32; height * width * ch];
    for pr in 0..tokens.height() {
        for pc in 0..tokens.width() {
            let cw = codebook.codeword(tokens.get(pr, pc) as usize);
            for dr in 0..f {
                let dst = ((pr * f + dr) * width + pc * f) * ch;
                values[dst..dst + f * ch].copy_from_slice(&cw[dr * f * ch..(dr + 1) * f * ch]);
            }
        }
    }
    // Codewords are k-means means of in-range pixels, but clamp so that
    // hand-built codebooks cannot produce an invalid image.
    for v in &mut values {
        *v = v.clamp(0.0, 1.0);
    }
    ImageGrid::new(height, width, ch, values)
}
