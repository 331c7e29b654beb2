//! 2D-aware sequence shortening: raster-ordered sequences are viewed as
//! grids and regrouped in `s x s` spatial blocks.

use ndarray::Array2;

use crate::error::{shape_err, Result};
use crate::float::Scalar;

/// `(h*w) x d` -> `(h/s * w/s) x (d*s*s)`. The features of the fine position
/// at block offset `(dr, dc)` land at columns `(dr*s + dc)*d ..`.
pub fn space_to_depth<F: Scalar>(x: &Array2<F>, grid: (usize, usize), s: usize) -> Result<Array2<F>> {
    let (h, w) = grid;
    let d = x.ncols();
    if s == 0 || h % s != 0 || w % s != 0 {
        return shape_err(format!("grid {h}x{w} not divisible by block side {s}"));
    }
    if x.nrows() != h * w {
        return shape_err(format!("sequence length {} does not match grid {h}x{w}", x.nrows()));
    }
    let (sh, sw) = (h / s, w / s);
    let mut out = Array2::zeros((sh * sw, d * s * s));
    for r in 0..h {
        for c in 0..w {
            let coarse = (r / s) * sw + c / s;
            let offset = ((r % s) * s + c % s) * d;
            out.row_mut(coarse).slice_mut(ndarray::s![offset..offset + d]).assign(&x.row(r * w + c));
        }
    }
    Ok(out)
}

/// Exact inverse of [`space_to_depth`]; `grid` is the fine grid.
pub fn depth_to_space<F: Scalar>(x: &Array2<F>, grid: (usize, usize), s: usize) -> Result<Array2<F>> {
    let (h, w) = grid;
    if s == 0 || h % s != 0 || w % s != 0 {
        return shape_err(format!("grid {h}x{w} not divisible by block side {s}"));
    }
    let (sh, sw) = (h / s, w / s);
    if x.nrows() != sh * sw || x.ncols() % (s * s) != 0 {
        return shape_err(format!("tensor {:?} does not match coarse grid {sh}x{sw} with block {s}", x.dim()));
    }
    let d = x.ncols() / (s * s);
    let mut out = Array2::zeros((h * w, d));
    for r in 0..h {
        for c in 0..w {
            let coarse = (r / s) * sw + c / s;
            let offset = ((r % s) * s + c % s) * d;
            out.row_mut(r * w + c).assign(&x.row(coarse).slice(ndarray::s![offset..offset + d]));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn block_gathering() {
        // 4x4 grid, d=1, values are the raster index.
        let x = Array2::from_shape_fn((16, 1), |(p, _)| p as f64);
        let y = space_to_depth(&x, (4, 4), 2).unwrap();
        assert_eq!(y.dim(), (4, 4));
        assert_eq!(y.row(0).to_vec(), vec![0.0, 1.0, 4.0, 5.0]);
        assert_eq!(y.row(3).to_vec(), vec![10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn rejects_bad_grids() {
        let x = Array2::<f32>::zeros((6, 2));
        assert!(space_to_depth(&x, (2, 3), 2).is_err());
        assert!(space_to_depth(&x, (3, 3), 1).is_err());
        assert!(depth_to_space(&Array2::<f32>::zeros((2, 3)), (2, 2), 2).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(hb in 1usize..4, wb in 1usize..4, s in 1usize..4, d in 1usize..4) {
            let grid = (hb * s, wb * s);
            let x = Array2::from_shape_fn((grid.0 * grid.1, d), |(i, j)| (i * 7 + j) as f32);
            let y = space_to_depth(&x, grid, s).unwrap();
            prop_assert_eq!(y.dim(), (hb * wb, d * s * s));
            prop_assert_eq!(depth_to_space(&y, grid, s).unwrap(), x);
        }
    }
}
