//! Region-overlap and boundary-distance metrics.
//!
//! Conventions (also echoed in every serialized report):
//! - Surfaces are foreground pixels/voxels with a face-adjacent (4-/6-)
//!   background or out-of-bounds neighbor.
//! - Surface distances pool the directed nearest-neighbor distances of both
//!   directions; ASD is the mean of the pooled list and 95HD the
//!   linearly-interpolated 95th percentile of it. Pooled distances are sorted
//!   before aggregation, so swapping prediction and target changes nothing,
//!   bit for bit.
//! - Dice/Jaccard of two empty masks is (1, 1); surface distances of an
//!   empty surface are an error, never silently zero.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Mask;

/// Overlap scores for one class: `(dice, jaccard)`.
pub fn dice_jaccard(pred: &Mask, target: &Mask, class_id: u8) -> Result<(f64, f64)> {
    if pred.shape() != target.shape() {
        return Err(Error::DimensionMismatch(format!(
            "mask shapes {:?} and {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    let mut inter = 0usize;
    let mut a = 0usize;
    let mut b = 0usize;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let pin = p == class_id;
        let tin = t == class_id;
        a += pin as usize;
        b += tin as usize;
        inter += (pin && tin) as usize;
    }
    if a + b == 0 {
        return Ok((1.0, 1.0));
    }
    let union = a + b - inter;
    let dice = 2.0 * inter as f64 / (a + b) as f64;
    let jaccard = inter as f64 / union as f64;
    Ok((dice, jaccard))
}

/// Foreground points of `class_id` with at least one face-adjacent
/// background or out-of-bounds neighbor. Points are multi-indices padded to
/// three axes (third axis 0 for 2D masks).
pub fn surface_points(mask: &Mask, class_id: u8) -> Vec<[i64; 3]> {
    let shape = mask.shape();
    let rank = shape.len();
    let mut points = Vec::new();
    let mut idx = vec![0usize; rank];
    for &label in mask.data().iter() {
        if label == class_id {
            let mut on_surface = false;
            'axes: for axis in 0..rank {
                for dir in [-1i64, 1] {
                    let n = idx[axis] as i64 + dir;
                    if n < 0 || n as usize >= shape[axis] {
                        on_surface = true;
                        break 'axes;
                    }
                    let mut nidx = idx.clone();
                    nidx[axis] = n as usize;
                    if mask.get(&nidx) != class_id {
                        on_surface = true;
                        break 'axes;
                    }
                }
            }
            if on_surface {
                let mut p = [0i64; 3];
                for (axis, &i) in idx.iter().enumerate() {
                    p[axis] = i as i64;
                }
                points.push(p);
            }
        }
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    points
}

/// Directed nearest-neighbor distances from each point of `from` to the set
/// `to`, under per-axis spacing multipliers.
fn directed_nn_distances(from: &[[i64; 3]], to: &[[i64; 3]], spacing: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|a| {
            let mut best = f64::INFINITY;
            for b in to {
                let mut d2 = 0.0;
                for axis in 0..3 {
                    let d = (a[axis] - b[axis]) as f64 * spacing[axis];
                    d2 += d * d;
                }
                if d2 < best {
                    best = d2;
                }
            }
            best.sqrt()
        })
        .collect()
}

/// Linearly-interpolated `q`-quantile of an ascending-sorted list.
pub fn percentile_linear(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// `(hd95, asd)` in pixel/voxel units (unit spacing).
pub fn hd95_asd(pred: &Mask, target: &Mask, class_id: u8) -> Result<(f64, f64)> {
    let ones = [1.0; 3];
    hd95_asd_spaced(pred, target, class_id, ones)
}

/// `(hd95, asd)` with anisotropic per-axis spacing multipliers.
pub fn hd95_asd_spaced(
    pred: &Mask,
    target: &Mask,
    class_id: u8,
    spacing: [f64; 3],
) -> Result<(f64, f64)> {
    if pred.shape() != target.shape() {
        return Err(Error::DimensionMismatch(format!(
            "mask shapes {:?} and {:?} differ",
            pred.shape(),
            target.shape()
        )));
    }
    let a = surface_points(pred, class_id);
    let b = surface_points(target, class_id);
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedDistance(format!(
            "class {} surface is empty (pred: {} points, target: {} points)",
            class_id,
            a.len(),
            b.len()
        )));
    }
    let mut pooled = directed_nn_distances(&a, &b, spacing);
    pooled.extend(directed_nn_distances(&b, &a, spacing));
    pooled.sort_by(|x, y| x.partial_cmp(y).expect("distances are finite"));
    let asd = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let hd95 = percentile_linear(&pooled, 0.95);
    Ok((hd95, asd))
}

/// Per-sample, per-class metric row as written to report CSV files.
#[derive(Clone, Debug, Serialize)]
pub struct SampleRow {
    pub sample: usize,
    pub class_id: u8,
    pub dice: f64,
    pub jaccard: f64,
    pub hd95: f64,
    pub asd: f64,
    /// False when a surface was empty and the distances were substituted
    /// with the image-diagonal penalty.
    pub surface_defined: bool,
}

/// Mean/std aggregate of one class across samples.
#[derive(Clone, Debug, Serialize)]
pub struct ClassSummary {
    pub class_id: u8,
    pub n: usize,
    pub n_substituted: usize,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub jaccard_mean: f64,
    pub jaccard_std: f64,
    pub hd95_mean: f64,
    pub hd95_std: f64,
    pub asd_mean: f64,
    pub asd_std: f64,
}

/// Full report: conventions header, per-class aggregates, raw rows.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub conventions: Conventions,
    pub n_samples: usize,
    pub classes: Vec<ClassSummary>,
    pub rows: Vec<SampleRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Conventions {
    pub surface: &'static str,
    pub hd95: &'static str,
    pub asd: &'static str,
    pub empty_masks: &'static str,
    pub substitution: &'static str,
    pub std: &'static str,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            surface: "foreground with a face-adjacent (4-/6-neighborhood) background or \
                      out-of-bounds neighbor",
            hd95: "95th percentile (linear interpolation) of pooled bidirectional \
                   nearest-neighbor surface distances",
            asd: "mean of pooled bidirectional nearest-neighbor surface distances",
            empty_masks: "dice=jaccard=1 when both masks are empty; empty surfaces are \
                          substituted, never silently zero",
            substitution: "undefined surface distances are replaced by the image diagonal \
                           and flagged surface_defined=false",
            std: "population standard deviation (denominator n)",
        }
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregate rows into per-class summaries, in ascending class order.
/// Rows are consumed in their given (sample) order so the result is
/// deterministic.
pub fn aggregate(rows: &[SampleRow]) -> Vec<ClassSummary> {
    let mut class_ids: Vec<u8> = rows.iter().map(|r| r.class_id).collect();
    class_ids.sort_unstable();
    class_ids.dedup();
    class_ids
        .into_iter()
        .map(|cid| {
            let of = |f: fn(&SampleRow) -> f64| {
                rows.iter().filter(move |r| r.class_id == cid).map(f)
            };
            let (dice_mean, dice_std) = mean_std(of(|r| r.dice));
            let (jaccard_mean, jaccard_std) = mean_std(of(|r| r.jaccard));
            let (hd95_mean, hd95_std) = mean_std(of(|r| r.hd95));
            let (asd_mean, asd_std) = mean_std(of(|r| r.asd));
            ClassSummary {
                class_id: cid,
                n: rows.iter().filter(|r| r.class_id == cid).count(),
                n_substituted: rows
                    .iter()
                    .filter(|r| r.class_id == cid && !r.surface_defined)
                    .count(),
                dice_mean,
                dice_std,
                jaccard_mean,
                jaccard_std,
                hd95_mean,
                hd95_std,
                asd_mean,
                asd_std,
            }
        })
        .collect()
}

/// Build the full report from rows.
pub fn build_report(rows: Vec<SampleRow>) -> MetricsReport {
    let n_samples = rows
        .iter()
        .map(|r| r.sample)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    MetricsReport {
        schema_version: 1,
        conventions: Conventions::default(),
        n_samples,
        classes: aggregate(&rows),
        rows,
    }
}

impl MetricsReport {
    /// CSV with one row per sample per class. Schema v1:
    /// `sample,class_id,dice,jaccard,hd95,asd,surface_defined`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,class_id,dice,jaccard,hd95,asd,surface_defined\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.sample, r.class_id, r.dice, r.jaccard, r.hd95, r.asd, r.surface_defined
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn mask_from(shape: &[usize], fg: &[(usize, usize)]) -> Mask {
        let mut m = Mask::zeros(shape);
        for &(y, x) in fg {
            m.data_mut()[y * shape[1] + x] = 1;
        }
        m
    }

    #[test]
    fn dice_identical_and_disjoint() {
        let a = mask_from(&[4, 4], &[(1, 1), (1, 2), (2, 1)]);
        assert_eq!(dice_jaccard(&a, &a, 1).unwrap(), (1.0, 1.0));
        let b = mask_from(&[4, 4], &[(3, 3)]);
        assert_eq!(dice_jaccard(&a, &b, 1).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn dice_half_overlap_hand_value() {
        let a = mask_from(&[4, 4], &[(0, 0), (0, 1), (0, 2), (0, 3)]);
        let b = mask_from(&[4, 4], &[(0, 2), (0, 3), (1, 0), (1, 1)]);
        let (dice, jaccard) = dice_jaccard(&a, &b, 1).unwrap();
        assert_eq!(dice, 0.5);
        assert!((jaccard - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dice_both_empty_convention() {
        let a = Mask::zeros(&[3, 3]);
        assert_eq!(dice_jaccard(&a, &a, 1).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn dice_jaccard_algebraic_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        for _ in 0..50 {
            let mut a = Mask::zeros(&[8, 8]);
            let mut b = Mask::zeros(&[8, 8]);
            for v in a.data_mut() {
                *v = rng.random_range(0..2);
            }
            for v in b.data_mut() {
                *v = rng.random_range(0..2);
            }
            let (dice, jaccard) = dice_jaccard(&a, &b, 1).unwrap();
            assert!((dice - 2.0 * jaccard / (1.0 + jaccard)).abs() <= 1e-12);
        }
    }

    #[test]
    fn surface_single_pixel_and_empty() {
        let m = mask_from(&[3, 3], &[(1, 1)]);
        assert_eq!(surface_points(&m, 1), vec![[1, 1, 0]]);
        assert!(surface_points(&Mask::zeros(&[3, 3]), 1).is_empty());
    }

    #[test]
    fn surface_solid_square_perimeter() {
        let mut m = Mask::zeros(&[6, 6]);
        for y in 1..5 {
            for x in 1..5 {
                m.data_mut()[y * 6 + x] = 1;
            }
        }
        assert_eq!(surface_points(&m, 1).len(), 12);
    }

    #[test]
    fn hd_identical_masks_zero() {
        let m = mask_from(&[5, 5], &[(2, 2), (2, 3), (3, 2)]);
        assert_eq!(hd95_asd(&m, &m, 1).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn hd_diagonal_pair_is_sqrt2() {
        let a = mask_from(&[4, 4], &[(1, 1)]);
        let b = mask_from(&[4, 4], &[(2, 2)]);
        let (hd95, asd) = hd95_asd(&a, &b, 1).unwrap();
        assert_eq!(hd95, 2f64.sqrt());
        assert_eq!(asd, 2f64.sqrt());
    }

    #[test]
    fn hd_empty_surface_is_undefined_error() {
        let a = mask_from(&[4, 4], &[(1, 1)]);
        let empty = Mask::zeros(&[4, 4]);
        assert!(matches!(
            hd95_asd(&a, &empty, 1),
            Err(Error::UndefinedDistance(_))
        ));
    }

    #[test]
    fn hd_symmetric_under_swap_exactly() {
        let mut rng = ChaCha20Rng::seed_from_u64(32);
        for _ in 0..20 {
            let mut a = Mask::zeros(&[10, 10]);
            let mut b = Mask::zeros(&[10, 10]);
            for v in a.data_mut() {
                *v = (rng.random_range(0..4) == 0) as u8;
            }
            for v in b.data_mut() {
                *v = (rng.random_range(0..4) == 0) as u8;
            }
            if surface_points(&a, 1).is_empty() || surface_points(&b, 1).is_empty() {
                continue;
            }
            let ab = hd95_asd(&a, &b, 1).unwrap();
            let ba = hd95_asd(&b, &a, 1).unwrap();
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn asd_monotone_under_translation() {
        let target = mask_from(&[16, 16], &[(8, 4), (8, 5), (9, 4), (9, 5)]);
        let mut last = 0.0;
        for shift in 0..4 {
            let moved = mask_from(
                &[16, 16],
                &[
                    (8, 8 + shift),
                    (8, 9 + shift),
                    (9, 8 + shift),
                    (9, 9 + shift),
                ],
            );
            let (_, asd) = hd95_asd(&moved, &target, 1).unwrap();
            assert!(asd >= last, "asd {asd} decreased after moving away");
            last = asd;
        }
    }

    #[test]
    fn spacing_scales_distances() {
        let a = mask_from(&[4, 4], &[(1, 1)]);
        let b = mask_from(&[4, 4], &[(1, 2)]);
        let (hd, asd) = hd95_asd_spaced(&a, &b, 1, [1.0, 2.5, 1.0]).unwrap();
        assert_eq!(hd, 2.5);
        assert_eq!(asd, 2.5);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(percentile_linear(&v, 0.0), 0.0);
        assert_eq!(percentile_linear(&v, 1.0), 3.0);
        assert_eq!(percentile_linear(&v, 0.5), 1.5);
        assert!((percentile_linear(&v, 0.95) - 2.85).abs() < 1e-12);
    }

    #[test]
    fn report_csv_row_count_and_header() {
        let rows = vec![
            SampleRow {
                sample: 0,
                class_id: 1,
                dice: 0.9,
                jaccard: 0.8,
                hd95: 1.0,
                asd: 0.5,
                surface_defined: true,
            },
            SampleRow {
                sample: 0,
                class_id: 2,
                dice: 0.7,
                jaccard: 0.6,
                hd95: 2.0,
                asd: 1.0,
                surface_defined: false,
            },
        ];
        let report = build_report(rows);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("sample,class_id,dice"));
        assert_eq!(report.classes.len(), 2);
        assert_eq!(report.classes[1].n_substituted, 1);
        assert_eq!(report.n_samples, 1);
        // Aggregates of a single row are the row itself with zero std.
        assert_eq!(report.classes[0].dice_mean, 0.9);
        assert_eq!(report.classes[0].dice_std, 0.0);
    }
}
