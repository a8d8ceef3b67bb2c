//! Discrete raw and central image moments, in 2D and 3D.
//!
//! `central_moment` is the oracle side of the loss equivalence property: the
//! coordinate-weighted residual loss of order (p, q) must equal the central
//! moment of order (2p, 2q) of the squared residual map.

use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::CoordGrid;
use crate::tensor::Tensor;

/// Integer power by repeated multiplication.
///
/// Exact for grid values that are exactly representable, which keeps
/// equality-based property tests deterministic. Orders in practice are <= 4.
#[inline]
pub fn int_pow(base: f64, exp: u32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..exp {
        acc *= base;
    }
    acc
}

/// Moment order: exponents per coordinate axis, 2D `(p, q)` or 3D `(p, q, r)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MomentOrder {
    pub p: u32,
    pub q: u32,
    pub r: Option<u32>,
}

impl MomentOrder {
    pub fn two(p: u32, q: u32) -> Self {
        MomentOrder { p, q, r: None }
    }

    pub fn three(p: u32, q: u32, r: u32) -> Self {
        MomentOrder { p, q, r: Some(r) }
    }

    /// Number of coordinate axes this order applies to.
    pub fn rank(&self) -> usize {
        if self.r.is_some() {
            3
        } else {
            2
        }
    }

    /// Exponent for each axis, in tensor-axis order.
    pub fn components(&self) -> Vec<u32> {
        match self.r {
            Some(r) => vec![self.p, self.q, r],
            None => vec![self.p, self.q],
        }
    }

    /// Order with every exponent doubled.
    pub fn doubled(&self) -> MomentOrder {
        MomentOrder {
            p: 2 * self.p,
            q: 2 * self.q,
            r: self.r.map(|r| 2 * r),
        }
    }

    /// Total order `p + q (+ r)`.
    pub fn total(&self) -> u32 {
        self.p + self.q + self.r.unwrap_or(0)
    }

    fn check_rank(&self, tensor_rank: usize, what: &str) -> Result<()> {
        if self.rank() != tensor_rank {
            return Err(Error::DimensionMismatch(format!(
                "{} has rank {} but moment order {:?} has rank {}",
                what,
                tensor_rank,
                self.components(),
                self.rank()
            )));
        }
        Ok(())
    }
}

// Orders serialize as plain arrays: [p, q] or [p, q, r].
impl Serialize for MomentOrder {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let comps = self.components();
        let mut seq = serializer.serialize_seq(Some(comps.len()))?;
        for c in comps {
            seq.serialize_element(&c)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for MomentOrder {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct OrderVisitor;
        impl<'de> Visitor<'de> for OrderVisitor {
            type Value = MomentOrder;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("an array [p, q] or [p, q, r] of non-negative integers")
            }

            fn visit_seq<A: SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<MomentOrder, A::Error> {
                let mut comps: Vec<u32> = Vec::new();
                while let Some(v) = seq.next_element::<u32>()? {
                    comps.push(v);
                }
                match comps.as_slice() {
                    [p, q] => Ok(MomentOrder::two(*p, *q)),
                    [p, q, r] => Ok(MomentOrder::three(*p, *q, *r)),
                    other => Err(serde::de::Error::invalid_length(other.len(), &self)),
                }
            }
        }
        deserializer.deserialize_seq(OrderVisitor)
    }
}

/// Raw (uncentered) moment: sum of `i^p j^q [k^r] f` over 1-based indices.
pub fn raw_moment(f: &Tensor, order: &MomentOrder) -> Result<f64> {
    order.check_rank(f.rank(), "tensor")?;
    let comps = order.components();
    let shape = f.shape().to_vec();
    let mut idx = vec![0usize; shape.len()];
    let mut acc = 0.0;
    for &v in f.data() {
        let mut w = 1.0;
        for (axis, &exp) in comps.iter().enumerate() {
            w *= int_pow((idx[axis] + 1) as f64, exp);
        }
        acc += w * v;
        for axis in (0..shape.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    Ok(acc)
}

/// Mass centroid in 1-based coordinates: `(m10/m00, m01/m00[, ...])`.
pub fn centroid(f: &Tensor) -> Result<Vec<f64>> {
    let rank = f.rank();
    if rank != 2 && rank != 3 {
        return Err(Error::DimensionMismatch(format!(
            "centroid expects a 2D or 3D tensor, got rank {}",
            rank
        )));
    }
    let zero = if rank == 2 {
        MomentOrder::two(0, 0)
    } else {
        MomentOrder::three(0, 0, 0)
    };
    let m00 = raw_moment(f, &zero)?;
    if m00 == 0.0 {
        return Err(Error::DegenerateMass);
    }
    let mut out = Vec::with_capacity(rank);
    for axis in 0..rank {
        let mut comps = vec![0u32; rank];
        comps[axis] = 1;
        let order = if rank == 2 {
            MomentOrder::two(comps[0], comps[1])
        } else {
            MomentOrder::three(comps[0], comps[1], comps[2])
        };
        out.push(raw_moment(f, &order)? / m00);
    }
    Ok(out)
}

fn check_grid(f: &Tensor, grid: &CoordGrid, order: &MomentOrder) -> Result<()> {
    if f.shape() != grid.shape() {
        return Err(Error::DimensionMismatch(format!(
            "tensor shape {:?} does not match grid shape {:?}",
            f.shape(),
            grid.shape()
        )));
    }
    order.check_rank(f.rank(), "tensor")
}

/// Dense coordinate-weighted map: element-wise
/// `C0^p (.) C1^q [(.) C2^r] (.) f`, same shape as `f`.
pub fn mu_map(f: &Tensor, grid: &CoordGrid, order: &MomentOrder) -> Result<Tensor> {
    check_grid(f, grid, order)?;
    let comps = order.components();
    let mut out = f.clone();
    for (axis, &exp) in comps.iter().enumerate() {
        if exp == 0 {
            continue;
        }
        let coords = grid.axis(axis).data();
        for (o, &c) in out.data_mut().iter_mut().zip(coords.iter()) {
            *o *= int_pow(c, exp);
        }
    }
    Ok(out)
}

/// Central moment: the scalar sum over [`mu_map`], in row-major order.
pub fn central_moment(f: &Tensor, grid: &CoordGrid, order: &MomentOrder) -> Result<f64> {
    Ok(mu_map(f, grid, order)?.sum())
}

/// Central moment with Kahan-compensated summation, for large tensors.
pub fn central_moment_compensated(
    f: &Tensor,
    grid: &CoordGrid,
    order: &MomentOrder,
) -> Result<f64> {
    Ok(mu_map(f, grid, order)?.sum_compensated())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid_2d, GridConvention};

    fn ones_2x2() -> Tensor {
        Tensor::filled(&[2, 2], 1.0)
    }

    #[test]
    fn raw_zeroth_is_sum() {
        let f = ones_2x2();
        assert_eq!(raw_moment(&f, &MomentOrder::two(0, 0)).unwrap(), 4.0);
        let g = Tensor::from_fn(&[3, 5], |ix| (ix[0] * 5 + ix[1]) as f64 * 0.5);
        assert_eq!(raw_moment(&g, &MomentOrder::two(0, 0)).unwrap(), g.sum());
    }

    #[test]
    fn raw_first_order_hand_value() {
        // Sum of i * f over 1-based rows: 1*2 + 2*2 = 6 on all-ones 2x2.
        let f = ones_2x2();
        assert_eq!(raw_moment(&f, &MomentOrder::two(1, 0)).unwrap(), 6.0);
    }

    #[test]
    fn raw_single_point() {
        let f = Tensor::new(vec![2, 2], vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        // Only (i, j) = (2, 2) contributes: 2 * 2 * 1 = 4.
        assert_eq!(raw_moment(&f, &MomentOrder::two(1, 1)).unwrap(), 4.0);
    }

    #[test]
    fn raw_rank_mismatch() {
        let f = ones_2x2();
        assert!(raw_moment(&f, &MomentOrder::three(0, 0, 0)).is_err());
    }

    #[test]
    fn centroid_values() {
        assert_eq!(centroid(&ones_2x2()).unwrap(), vec![1.5, 1.5]);
        let point = Tensor::new(vec![2, 2], vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(centroid(&point).unwrap(), vec![2.0, 2.0]);
        let diag = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(centroid(&diag).unwrap(), vec![1.5, 1.5]);
    }

    #[test]
    fn centroid_zero_mass_is_degenerate() {
        let z = Tensor::zeros(&[2, 2]);
        assert!(matches!(centroid(&z), Err(Error::DegenerateMass)));
    }

    #[test]
    fn mu_map_identity_at_zero_order() {
        let f = Tensor::from_fn(&[3, 4], |ix| (ix[0] + 2 * ix[1]) as f64);
        let grid = make_grid_2d(3, 4, GridConvention::Paper, true).unwrap();
        let m = mu_map(&f, &grid, &MomentOrder::two(0, 0)).unwrap();
        assert_eq!(m, f);
    }

    #[test]
    fn mu_map_hand_value_order_11() {
        let f = ones_2x2();
        let grid = make_grid_2d(2, 2, GridConvention::Paper, true).unwrap();
        let m = mu_map(&f, &grid, &MomentOrder::two(1, 1)).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn mu_map_zero_weight_row_annihilates() {
        let f = Tensor::from_fn(&[2, 3], |ix| 1.0 + ix[1] as f64);
        let grid = make_grid_2d(2, 3, GridConvention::Paper, true).unwrap();
        // Row 0 of the Paper grid has coordinate (1 - 1)/2 = 0.
        let m = mu_map(&f, &grid, &MomentOrder::two(1, 0)).unwrap();
        assert_eq!(&m.data()[0..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn mu_map_shape_mismatch() {
        let f = Tensor::zeros(&[2, 3]);
        let grid = make_grid_2d(3, 2, GridConvention::Paper, true).unwrap();
        assert!(mu_map(&f, &grid, &MomentOrder::two(1, 0)).is_err());
    }

    #[test]
    fn central_moment_hand_values() {
        let f = ones_2x2();
        let grid = make_grid_2d(2, 2, GridConvention::Paper, true).unwrap();
        assert_eq!(
            central_moment(&f, &grid, &MomentOrder::two(1, 0)).unwrap(),
            1.0
        );
        assert_eq!(
            central_moment(&f, &grid, &MomentOrder::two(0, 0)).unwrap(),
            4.0
        );
        assert_eq!(
            central_moment(&f, &grid, &MomentOrder::two(1, 1)).unwrap(),
            0.25
        );
    }

    #[test]
    fn central_moment_equals_mu_map_sum_exactly() {
        let f = Tensor::from_fn(&[5, 7], |ix| ((ix[0] * 7 + ix[1]) as f64).sin());
        let grid = make_grid_2d(5, 7, GridConvention::Paper, true).unwrap();
        for p in 0..3 {
            for q in 0..3 {
                let order = MomentOrder::two(p, q);
                let direct = central_moment(&f, &grid, &order).unwrap();
                let via_map = mu_map(&f, &grid, &order).unwrap().sum();
                assert_eq!(direct, via_map);
            }
        }
    }

    #[test]
    fn order_round_trips_through_json() {
        let o2 = MomentOrder::two(2, 0);
        let o3 = MomentOrder::three(0, 2, 2);
        let j2 = serde_json::to_string(&o2).unwrap();
        let j3 = serde_json::to_string(&o3).unwrap();
        assert_eq!(j2, "[2,0]");
        assert_eq!(j3, "[0,2,2]");
        assert_eq!(serde_json::from_str::<MomentOrder>(&j2).unwrap(), o2);
        assert_eq!(serde_json::from_str::<MomentOrder>(&j3).unwrap(), o3);
        assert!(serde_json::from_str::<MomentOrder>("[1]").is_err());
        assert!(serde_json::from_str::<MomentOrder>("[1,2,3,4]").is_err());
    }
}
