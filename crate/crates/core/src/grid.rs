//! Centered coordinate rasters.
//!
//! A [`CoordGrid`] carries one tensor per axis, each of the full image shape,
//! holding that axis's centered coordinate at every pixel or voxel. These are
//! the weights that make the residual-moment loss location-aware. Coordinates
//! are constants of the image shape, so grids are built once and cached.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Indexing and centering rule for coordinate axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridConvention {
    /// 1-based coordinates `1..=H`, centered by subtracting `H/2`.
    ///
    /// For any extent this grid is asymmetric by half a pixel: the value at
    /// the first index is `1 - H/2`, at the last `H/2`.
    Paper,
    /// 0-based coordinates `0..H`, centered by subtracting `(H-1)/2`.
    ///
    /// Exactly antisymmetric under axis flip, which makes symmetry
    /// properties testable to the last bit.
    Symmetric,
}

impl GridConvention {
    /// Centered coordinate of `index` (0-based) on an axis of `extent`.
    fn coord(self, index: usize, extent: usize) -> f64 {
        match self {
            // 1-based position minus H/2; both terms are exact in f64.
            GridConvention::Paper => (index + 1) as f64 - extent as f64 / 2.0,
            GridConvention::Symmetric => index as f64 - (extent - 1) as f64 / 2.0,
        }
    }
}

/// Centered (optionally normalized) per-axis coordinate rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordGrid {
    shape: Vec<usize>,
    axes: Vec<Tensor>,
    normalized: bool,
    convention: GridConvention,
}

impl CoordGrid {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Full-shape tensor of centered coordinates along `axis`.
    pub fn axis(&self, axis: usize) -> &Tensor {
        &self.axes[axis]
    }

    pub fn axes(&self) -> &[Tensor] {
        &self.axes
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn convention(&self) -> GridConvention {
        self.convention
    }

    /// Centered coordinate value along `axis` at 0-based `index`, without
    /// materializing the full raster.
    pub fn axis_value(&self, axis: usize, index: usize) -> f64 {
        let c = self.convention.coord(index, self.shape[axis]);
        if self.normalized {
            c / self.shape[axis] as f64
        } else {
            c
        }
    }
}

fn build_grid(shape: &[usize], convention: GridConvention, normalized: bool) -> Result<CoordGrid> {
    for (axis, &extent) in shape.iter().enumerate() {
        if extent == 0 {
            return Err(Error::InvalidDimension(format!(
                "axis {} of grid shape {:?} has zero extent",
                axis, shape
            )));
        }
    }
    let mut axes = Vec::with_capacity(shape.len());
    for axis in 0..shape.len() {
        let extent = shape[axis];
        // Per-axis coordinate line, then broadcast across the other axes.
        let line: Vec<f64> = (0..extent)
            .map(|i| {
                let c = convention.coord(i, extent);
                if normalized {
                    c / extent as f64
                } else {
                    c
                }
            })
            .collect();
        axes.push(Tensor::from_fn(shape, |ix| line[ix[axis]]));
    }
    Ok(CoordGrid {
        shape: shape.to_vec(),
        axes,
        normalized,
        convention,
    })
}

/// Coordinate grid for an `height x width` image.
///
/// Axis 0 runs over rows (extent `height`), axis 1 over columns. Each axis is
/// normalized by its own extent when `normalized` is set.
pub fn make_grid_2d(
    height: usize,
    width: usize,
    convention: GridConvention,
    normalized: bool,
) -> Result<CoordGrid> {
    build_grid(&[height, width], convention, normalized)
}

/// Coordinate grid for a `depth x height x width` volume.
///
/// Axis order matches the tensor layout; each axis is centered and normalized
/// by its own extent.
pub fn make_grid_3d(
    depth: usize,
    height: usize,
    width: usize,
    convention: GridConvention,
    normalized: bool,
) -> Result<CoordGrid> {
    build_grid(&[depth, height, width], convention, normalized)
}

type GridKey = (Vec<usize>, GridConvention, bool);

fn cache() -> &'static Mutex<HashMap<GridKey, Arc<CoordGrid>>> {
    static CACHE: OnceLock<Mutex<HashMap<GridKey, Arc<CoordGrid>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared grid for a shape, built on first use and reused afterwards.
pub fn cached_grid(
    shape: &[usize],
    convention: GridConvention,
    normalized: bool,
) -> Result<Arc<CoordGrid>> {
    let key = (shape.to_vec(), convention, normalized);
    let mut map = cache().lock().expect("grid cache poisoned");
    if let Some(g) = map.get(&key) {
        return Ok(Arc::clone(g));
    }
    let grid = Arc::new(build_grid(shape, convention, normalized)?);
    map.insert(key, Arc::clone(&grid));
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_2x2_normalized() {
        let g = make_grid_2d(2, 2, GridConvention::Paper, true).unwrap();
        // Row axis: (i - H/2)/H for i in {1,2}, H = 2.
        assert_eq!(g.axis(0).data(), &[0.0, 0.0, 0.5, 0.5]);
        // Column axis per row: 0, 0.5.
        assert_eq!(g.axis(1).data(), &[0.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn paper_2x2_unnormalized() {
        let g = make_grid_2d(2, 2, GridConvention::Paper, false).unwrap();
        assert_eq!(g.axis(0).data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn symmetric_3x3_unnormalized() {
        let g = make_grid_2d(3, 3, GridConvention::Symmetric, false).unwrap();
        assert_eq!(g.axis(0).data()[0..3], [-1.0, -1.0, -1.0]);
        assert_eq!(g.axis(0).data()[3..6], [0.0, 0.0, 0.0]);
        assert_eq!(g.axis(0).data()[6..9], [1.0, 1.0, 1.0]);
    }

    #[test]
    fn paper_3d_2x2x2_normalized() {
        let g = make_grid_3d(2, 2, 2, GridConvention::Paper, true).unwrap();
        for axis in 0..3 {
            let mut values: Vec<f64> = g.axis(axis).data().to_vec();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            values.dedup();
            assert_eq!(values, vec![0.0, 0.5], "axis {}", axis);
        }
    }

    #[test]
    fn paper_1x1x1_unnormalized_single_voxel() {
        let g = make_grid_3d(1, 1, 1, GridConvention::Paper, false).unwrap();
        for axis in 0..3 {
            assert_eq!(g.axis(axis).data(), &[0.5]);
        }
    }

    #[test]
    fn symmetric_3x3x3_normalized_middle_is_zero() {
        let g = make_grid_3d(3, 3, 3, GridConvention::Symmetric, true).unwrap();
        for axis in 0..3 {
            for &v in g.axis(axis).data() {
                assert!(
                    v == -1.0 / 3.0 || v == 0.0 || v == 1.0 / 3.0,
                    "unexpected value {v}"
                );
            }
        }
        // Center voxel is zero on every axis.
        assert_eq!(g.axis(0).get(&[1, 1, 1]), 0.0);
        assert_eq!(g.axis(1).get(&[1, 1, 1]), 0.0);
        assert_eq!(g.axis(2).get(&[1, 1, 1]), 0.0);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(matches!(
            make_grid_2d(0, 4, GridConvention::Paper, false),
            Err(Error::InvalidDimension(_))
        ));
        assert!(make_grid_3d(2, 0, 2, GridConvention::Paper, true).is_err());
    }

    #[test]
    fn determinism_bit_identical() {
        let a = make_grid_2d(7, 5, GridConvention::Paper, true).unwrap();
        let b = make_grid_2d(7, 5, GridConvention::Paper, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constancy_along_other_axes() {
        let g = make_grid_3d(3, 4, 5, GridConvention::Paper, true).unwrap();
        for axis in 0..3 {
            let t = g.axis(axis);
            let mut idx = [0usize; 3];
            for d in 0..3 {
                for h in 0..4 {
                    for w in 0..5 {
                        idx[0] = d;
                        idx[1] = h;
                        idx[2] = w;
                        let expected = g.axis_value(axis, idx[axis]);
                        assert_eq!(t.get(&idx), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn symmetric_flip_negates_exactly() {
        for &extent in &[1usize, 2, 3, 4, 7] {
            let g = make_grid_2d(extent, 3, GridConvention::Symmetric, true).unwrap();
            for i in 0..extent {
                let a = g.axis_value(0, i);
                let b = g.axis_value(0, extent - 1 - i);
                assert_eq!(a, -b, "extent {extent} index {i}");
            }
        }
    }

    #[test]
    fn paper_normalized_bounded_by_half() {
        for &(h, w) in &[(1usize, 1usize), (2, 3), (16, 9), (33, 29)] {
            let g = make_grid_2d(h, w, GridConvention::Paper, true).unwrap();
            for axis in 0..2 {
                for &v in g.axis(axis).data() {
                    assert!(v.abs() <= 0.5);
                }
            }
        }
    }

    #[test]
    fn cache_returns_shared_instance() {
        let a = cached_grid(&[6, 6], GridConvention::Paper, true).unwrap();
        let b = cached_grid(&[6, 6], GridConvention::Paper, true).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(*a, make_grid_2d(6, 6, GridConvention::Paper, true).unwrap());
    }
}
