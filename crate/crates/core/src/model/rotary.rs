//! Axial rotary position embedding.
//!
//! Each head dimension is split in two halves. The first half is rotated by
//! angles proportional to the row index, the second half by the column index.
//! Within a half, adjacent pairs `(2i, 2i + 1)` rotate with frequency
//! `base^(-2i / half)`.

use ndarray::{Array2, ArrayViewMut2};

use crate::float::Scalar;

pub const ROTARY_BASE: f64 = 10_000.0;

/// Precomputed cos/sin tables for one grid resolution.
#[derive(Debug, Clone)]
pub struct AxialRotary<F> {
    head_dim: usize,
    grid: (usize, usize),
    /// `positions x head_dim / 2`, one entry per rotated pair.
    cos: Array2<F>,
    sin: Array2<F>,
}

impl<F: Scalar> AxialRotary<F> {
    pub fn new(head_dim: usize, grid: (usize, usize)) -> Self {
        assert!(head_dim % 4 == 0, "axial rotary needs head_dim divisible by 4");
        let half = head_dim / 2;
        let pairs = half / 2;
        let (h, w) = grid;
        let mut cos = Array2::zeros((h * w, head_dim / 2));
        let mut sin = Array2::zeros((h * w, head_dim / 2));
        for r in 0..h {
            for c in 0..w {
                let p = r * w + c;
                for i in 0..pairs {
                    let freq = ROTARY_BASE.powf(-(2.0 * i as f64) / half as f64);
                    for (slot, pos) in [(i, r), (pairs + i, c)] {
                        let angle = pos as f64 * freq;
                        cos[[p, slot]] = F::from_f64c(angle.cos());
                        sin[[p, slot]] = F::from_f64c(angle.sin());
                    }
                }
            }
        }
        Self { head_dim, grid, cos, sin }
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    /// Rotate every row of `x` (`positions x head_dim`) in place. `inverse`
    /// applies the transpose rotation, which is what backprop needs.
    pub fn apply(&self, x: &mut ArrayViewMut2<F>, inverse: bool) {
        debug_assert_eq!(x.ncols(), self.head_dim);
        for (p, mut row) in x.rows_mut().into_iter().enumerate() {
            for slot in 0..self.head_dim / 2 {
                let (c, mut s) = (self.cos[[p, slot]], self.sin[[p, slot]]);
                if inverse {
                    s = -s;
                }
                let (a, b) = (row[2 * slot], row[2 * slot + 1]);
                row[2 * slot] = a * c - b * s;
                row[2 * slot + 1] = a * s + b * c;
            }
        }
    }

    /// Rotate a single vector as if it sat at `(row, col)`.
    pub fn rotate(&self, v: &[F], row: usize, col: usize) -> Vec<F> {
        let mut x = Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap();
        let one = Self::single(self.head_dim, row, col);
        one.apply(&mut x.view_mut(), false);
        x.into_raw_vec_and_offset().0
    }

    fn single(head_dim: usize, row: usize, col: usize) -> Self {
        let full = Self::new(head_dim, (row + 1, col + 1));
        let p = row * (col + 1) + col;
        Self {
            head_dim,
            grid: (1, 1),
            cos: full.cos.row(p).to_owned().insert_axis(ndarray::Axis(0)),
            sin: full.sin.row(p).to_owned().insert_axis(ndarray::Axis(0)),
        }
    }
}
