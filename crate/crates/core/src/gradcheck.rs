//! Central finite differences for gradient verification.
//!
//! The closure under test is treated as a black box; the helpers here never
//! call into the analytic-gradient paths they are used to check.

use crate::tensor::Tensor;

/// Step used by all gradient checks in this crate.
pub const FD_STEP: f64 = 1e-6;

/// Central-difference gradient of a scalar function of a tensor.
///
/// Perturbs one element at a time: `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad(base: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut grad = Tensor::zeros(base.shape());
    let mut probe = base.clone();
    for i in 0..base.len() {
        let orig = base.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Central-difference partial derivative for a single element of `base`.
pub fn finite_diff_partial(
    base: &Tensor,
    index: usize,
    step: f64,
    mut f: impl FnMut(&Tensor) -> f64,
) -> f64 {
    let mut probe = base.clone();
    let orig = base.data()[index];
    probe.data_mut()[index] = orig + step;
    let plus = f(&probe);
    probe.data_mut()[index] = orig - step;
    let minus = f(&probe);
    (plus - minus) / (2.0 * step)
}

/// Maximum element error normalized by the gradient's overall magnitude.
///
/// `max_i |a_i - n_i| / (max_j max(|a_j|, |n_j|) + guard)`. Normalizing by
/// the global scale instead of per-element keeps near-zero entries (where
/// finite differences only produce rounding noise) from dominating.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let max_abs = analytic
        .iter()
        .zip(numeric.iter())
        .fold(0.0f64, |m, (&a, &n)| m.max((a - n).abs()));
    max_abs / (scale + 1e-30)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // f(x) = sum x_i^2 has gradient 2x.
        let base = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let fd = finite_diff_grad(&base, FD_STEP, |t| t.data().iter().map(|v| v * v).sum());
        let analytic: Vec<f64> = base.data().iter().map(|v| 2.0 * v).collect();
        assert!(max_relative_error(&analytic, fd.data()) < 1e-9);
    }

    #[test]
    fn error_normalized_by_scale() {
        // A tiny absolute discrepancy on a large-scale gradient is small.
        assert!(max_relative_error(&[1000.0, 0.0], &[1000.0, 1e-7]) < 1e-9);
        // The same discrepancy OF the dominant entry is what counts.
        assert!(max_relative_error(&[1.0], &[1.1]) > 0.09);
    }
}
