//! Shared prediction/evaluation pipeline used by training (final-score
//! logging) and by the eval command, so both report identical numbers for
//! the same checkpoint and data.

use crate::data::{normalize_mean_std, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport, SampleRow};
use crate::nn::UNetLite;
use crate::tensor::{argmax_channels, Mask, Tensor};

/// How a class id maps to a binary region.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassConvention {
    /// Region of class c is exactly the pixels labelled c.
    Exact,
    /// Region of class c is the pixels labelled >= c (classes form nested
    /// regions, e.g. a cup inside a disk).
    Nested,
}

/// Convention used throughout this crate: nested regions whenever there is
/// more than one foreground class.
pub fn default_convention(num_classes: usize) -> ClassConvention {
    if num_classes > 2 {
        ClassConvention::Nested
    } else {
        ClassConvention::Exact
    }
}

/// Model input from a stored sample image: adds the channel axis, and
/// standardizes 3D volumes to zero mean / unit std.
pub fn prepare_input(dims: usize, image: &Tensor) -> Result<Tensor> {
    let prepared = if dims == 3 {
        normalize_mean_std(image)?
    } else {
        image.clone()
    };
    Ok(prepared.unsqueeze0())
}

/// Argmax-decoded class labels for one image.
pub fn predict(model: &UNetLite, image: &Tensor) -> Result<Mask> {
    let input = prepare_input(model.spatial_rank(), image)?;
    let logits = model.forward(&input, false, 0)?;
    argmax_channels(&logits)
}

fn binary_region(mask: &Mask, class_id: u8, convention: ClassConvention) -> Mask {
    let data = match convention {
        ClassConvention::Exact => mask
            .data()
            .iter()
            .map(|&v| (v == class_id) as u8)
            .collect(),
        ClassConvention::Nested => mask
            .data()
            .iter()
            .map(|&v| (v >= class_id) as u8)
            .collect(),
    };
    Mask::new(mask.shape().to_vec(), data).expect("shape preserved")
}

/// Euclidean length of the extent vector; strictly exceeds any achievable
/// surface distance and stands in for undefined ones.
fn diagonal_penalty(shape: &[usize]) -> f64 {
    shape
        .iter()
        .map(|&e| (e as f64) * (e as f64))
        .sum::<f64>()
        .sqrt()
}

/// Evaluate a model on every sample of a dataset, one row per sample per
/// foreground class.
pub fn evaluate_dataset(
    model: &UNetLite,
    dataset: &Dataset,
    convention: ClassConvention,
) -> Result<Vec<SampleRow>> {
    if dataset.samples.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    if dataset.dims() != model.spatial_rank() {
        return Err(Error::DimensionMismatch(format!(
            "model is {}D but dataset is {}D",
            model.spatial_rank(),
            dataset.dims()
        )));
    }
    let mut rows = Vec::new();
    for (i, sample) in dataset.samples.iter().enumerate() {
        let pred = predict(model, &sample.image)?;
        for class_id in 1..model.num_classes() as u8 {
            let pred_bin = binary_region(&pred, class_id, convention);
            let target_bin = binary_region(&sample.mask, class_id, convention);
            let (dice, jaccard) = metrics::dice_jaccard(&pred_bin, &target_bin, 1)?;
            let (hd95, asd, surface_defined) = match metrics::hd95_asd(&pred_bin, &target_bin, 1)
            {
                Ok((hd95, asd)) => (hd95, asd, true),
                Err(Error::UndefinedDistance(_)) => {
                    let penalty = diagonal_penalty(sample.mask.shape());
                    (penalty, penalty, false)
                }
                Err(e) => return Err(e),
            };
            rows.push(SampleRow {
                sample: i,
                class_id,
                dice,
                jaccard,
                hd95,
                asd,
                surface_defined,
            });
        }
    }
    Ok(rows)
}

/// Full evaluation report for a dataset.
pub fn evaluate_report(
    model: &UNetLite,
    dataset: &Dataset,
    convention: ClassConvention,
) -> Result<MetricsReport> {
    Ok(metrics::build_report(evaluate_dataset(
        model, dataset, convention,
    )?))
}

/// Mean Dice over all rows (every sample, every foreground class).
pub fn mean_dice(rows: &[SampleRow]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    rows.iter().map(|r| r.dice).sum::<f64>() / rows.len() as f64
}

/// Mean 95HD over all rows, substitutions included.
pub fn mean_hd95(rows: &[SampleRow]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    rows.iter().map(|r| r.hd95).sum::<f64>() / rows.len() as f64
}
