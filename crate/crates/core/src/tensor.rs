//! Dense n-dimensional `f64` tensors and integer label masks.
//!
//! Everything in this crate moves through [`Tensor`]: images, coordinate
//! rasters, network activations, gradients. Data is row-major (last axis
//! contiguous) and all arithmetic is `f64` so that finite-difference checks
//! stay tight.

use crate::error::{Error, Result};

/// Dense row-major `f64` array with an explicit shape.
///
/// A rank-0 tensor holds exactly one element and acts as a scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and matching flat data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Rank-0 scalar tensor.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Build from a function of the multi-index, iterating row-major.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            for axis in (0..shape.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < shape[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (axis, &i) in index.iter().enumerate() {
            debug_assert!(i < self.shape[axis]);
            off = off * self.shape[axis] + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Same data viewed under a new shape with an equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combination of two tensors of identical shape.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::DimensionMismatch(format!(
                "shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Sum of all elements, accumulated in flat row-major order.
    ///
    /// The accumulation order is part of the contract: exact-equality tests
    /// rely on it.
    pub fn sum(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    /// Kahan-compensated sum, for large tensors where naive accumulation
    /// drifts. Same iteration order as [`Tensor::sum`].
    pub fn sum_compensated(&self) -> f64 {
        let mut acc = 0.0;
        let mut comp = 0.0;
        for &v in &self.data {
            let y = v - comp;
            let t = acc + y;
            comp = (t - acc) - y;
            acc = t;
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Prepend a length-1 axis (e.g. a single-channel image to `[1, H, W]`).
    pub fn unsqueeze0(&self) -> Tensor {
        let mut shape = Vec::with_capacity(self.shape.len() + 1);
        shape.push(1);
        shape.extend_from_slice(&self.shape);
        Tensor {
            shape,
            data: self.data.clone(),
        }
    }

    /// Extract channel `c` of a `[C, ...]` tensor as a `[...]` tensor.
    pub fn channel(&self, c: usize) -> Result<Tensor> {
        if self.shape.is_empty() || c >= self.shape[0] {
            return Err(Error::DimensionMismatch(format!(
                "channel {} out of range for shape {:?}",
                c, self.shape
            )));
        }
        let per: usize = self.shape[1..].iter().product();
        Ok(Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[c * per..(c + 1) * per].to_vec(),
        })
    }
}

/// Integer label raster (class ids per pixel/voxel), row-major like [`Tensor`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Mask { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Mask {
            shape: shape.to_vec(),
            data: vec![0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, index: &[usize]) -> u8 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (axis, &i) in index.iter().enumerate() {
            off = off * self.shape[axis] + i;
        }
        self.data[off]
    }

    /// Binary `f64` tensor that is 1 where the label equals `class_id`.
    pub fn indicator(&self, class_id: u8) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| if v == class_id { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Binary `f64` tensor that is 1 where the label is `>= class_id`.
    ///
    /// Used by nested-region evaluation where class 2 lies inside class 1.
    pub fn indicator_at_least(&self, class_id: u8) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| if v >= class_id { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn count(&self, class_id: u8) -> usize {
        self.data.iter().filter(|&&v| v == class_id).count()
    }
}

/// Channel-wise softmax of a `[C, ...]` tensor, numerically stabilized.
pub fn softmax_channels(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "softmax_channels expects [C, ...], got {:?}",
            logits.shape()
        )));
    }
    let channels = logits.shape()[0];
    let per: usize = logits.shape()[1..].iter().product();
    let mut out = vec![0.0; logits.len()];
    let data = logits.data();
    for pix in 0..per {
        let mut max = f64::NEG_INFINITY;
        for c in 0..channels {
            max = max.max(data[c * per + pix]);
        }
        let mut denom = 0.0;
        for c in 0..channels {
            let e = (data[c * per + pix] - max).exp();
            out[c * per + pix] = e;
            denom += e;
        }
        for c in 0..channels {
            out[c * per + pix] /= denom;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Argmax over channels of a `[C, ...]` tensor, as a label mask.
///
/// Ties resolve to the lowest channel index, deterministically.
pub fn argmax_channels(t: &Tensor) -> Result<Mask> {
    if t.rank() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "argmax_channels expects [C, ...], got {:?}",
            t.shape()
        )));
    }
    let channels = t.shape()[0];
    let per: usize = t.shape()[1..].iter().product();
    let data = t.data();
    let mut labels = vec![0u8; per];
    for pix in 0..per {
        let mut best = 0usize;
        let mut best_v = data[pix];
        for c in 1..channels {
            let v = data[c * per + pix];
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        labels[pix] = best as u8;
    }
    Mask::new(t.shape()[1..].to_vec(), labels)
}
