use rand::Rng;

use crate::codec::{Mask, TokenGrid};

/// A corrupted batch: starting grids plus the masks and thresholds that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub z0: Vec<TokenGrid>,
    pub masks: Vec<Mask>,
    pub thresholds: Vec<f64>,
}

impl Corruption {
    /// Fraction of corrupted cells per item.
    pub fn fractions(&self) -> Vec<f64> {
        self.masks.iter().map(|m| m.count() as f64 / m.cells().len() as f64).collect()
    }
}

/// Draw `t_i ~ U[0, 1]` per item, then corrupt each item with that rate.
pub fn corrupt<R: Rng>(batch: &[TokenGrid], vocab: usize, rng: &mut R) -> Corruption {
    let thresholds: Vec<f64> = batch.iter().map(|_| rng.gen()).collect();
    corrupt_with_thresholds(batch, vocab, &thresholds, rng)
}

/// Cell `(i, j)` of item `i` is replaced by a uniform token when
/// `R_ij < t_i` with `R_ij ~ U[0, 1]`; other cells keep the clean token.
pub fn corrupt_with_thresholds<R: Rng>(
    batch: &[TokenGrid],
    vocab: usize,
    thresholds: &[f64],
    rng: &mut R,
) -> Corruption {
    assert_eq!(batch.len(), thresholds.len(), "one threshold per batch item");
    let mut z0 = Vec::with_capacity(batch.len());
    let mut masks = Vec::with_capacity(batch.len());
    for (z, &t) in batch.iter().zip(thresholds) {
        let mut noisy = z.clone();
        let mut cells = Vec::with_capacity(z.len());
        for tok in noisy.tokens_mut() {
            let r: f64 = rng.gen();
            let prior = rng.gen_range(0..vocab) as u16;
            let hit = r < t;
            if hit {
                *tok = prior;
            }
            cells.push(hit);
        }
        masks.push(Mask::new(z.height(), z.width(), cells).unwrap());
        z0.push(noisy);
    }
    Corruption { z0, masks, thresholds: thresholds.to_vec() }
}
