//! Direct convolution kernels (forward and backward), stride 1, zero-padded
//! to keep the spatial extents ("same" padding), odd kernel extents only.
//!
//! These are the hot loops of the whole crate: training time is dominated by
//! them, so the inner loops are plain slice arithmetic that the compiler can
//! vectorize.

/// 2D forward: `input [Cin, H, W]`, `kernel [Cout, Cin, KH, KW]` -> `[Cout, H, W]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; cout * h * w];
    let pad_y = (kh / 2) as isize;
    let pad_x = (kw / 2) as isize;
    for co in 0..cout {
        for ci in 0..cin {
            for ky in 0..kh {
                let dy = ky as isize - pad_y;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..kw {
                    let dx = kx as isize - pad_x;
                    let (x0, x1) = valid_range(w, dx);
                    if x0 >= x1 {
                        continue;
                    }
                    let wgt = kernel[((co * cin + ci) * kh + ky) * kw + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src = (ci * h + sy) * w;
                        let dst = (co * h + y) * w;
                        let irow = &input[src + (x0 as isize + dx) as usize
                            ..src + (x1 as isize + dx) as usize];
                        let orow = &mut out[dst + x0..dst + x1];
                        for (o, &i) in orow.iter_mut().zip(irow.iter()) {
                            *o += wgt * i;
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2D backward w.r.t. the input: scatters `grad_out` back through the kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input(
    grad_out: &[f64],
    kernel: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let mut grad_in = vec![0.0; cin * h * w];
    let pad_y = (kh / 2) as isize;
    let pad_x = (kw / 2) as isize;
    for co in 0..cout {
        for ci in 0..cin {
            for ky in 0..kh {
                let dy = ky as isize - pad_y;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..kw {
                    let dx = kx as isize - pad_x;
                    let (x0, x1) = valid_range(w, dx);
                    if x0 >= x1 {
                        continue;
                    }
                    let wgt = kernel[((co * cin + ci) * kh + ky) * kw + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let gin = (ci * h + sy) * w;
                        let gout = (co * h + y) * w;
                        let grow = &grad_out[gout + x0..gout + x1];
                        let irow = &mut grad_in[gin + (x0 as isize + dx) as usize
                            ..gin + (x1 as isize + dx) as usize];
                        for (i, &g) in irow.iter_mut().zip(grow.iter()) {
                            *i += wgt * g;
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// 2D backward w.r.t. the kernel: correlation of `grad_out` with the input.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_kernel(
    grad_out: &[f64],
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let mut grad_k = vec![0.0; cout * cin * kh * kw];
    let pad_y = (kh / 2) as isize;
    let pad_x = (kw / 2) as isize;
    for co in 0..cout {
        for ci in 0..cin {
            for ky in 0..kh {
                let dy = ky as isize - pad_y;
                let (y0, y1) = valid_range(h, dy);
                for kx in 0..kw {
                    let dx = kx as isize - pad_x;
                    let (x0, x1) = valid_range(w, dx);
                    if x0 >= x1 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src = (ci * h + sy) * w;
                        let dst = (co * h + y) * w;
                        let irow = &input[src + (x0 as isize + dx) as usize
                            ..src + (x1 as isize + dx) as usize];
                        let grow = &grad_out[dst + x0..dst + x1];
                        for (&g, &i) in grow.iter().zip(irow.iter()) {
                            acc += g * i;
                        }
                    }
                    grad_k[((co * cin + ci) * kh + ky) * kw + kx] = acc;
                }
            }
        }
    }
    grad_k
}

/// 3D forward: `input [Cin, D, H, W]`, `kernel [Cout, Cin, KD, KH, KW]`.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_forward(
    input: &[f64],
    cin: usize,
    d: usize,
    h: usize,
    w: usize,
    kernel: &[f64],
    cout: usize,
    kd: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; cout * d * h * w];
    let pad_z = (kd / 2) as isize;
    let pad_y = (kh / 2) as isize;
    let pad_x = (kw / 2) as isize;
    for co in 0..cout {
        for ci in 0..cin {
            for kz in 0..kd {
                let dz = kz as isize - pad_z;
                let (z0, z1) = valid_range(d, dz);
                for ky in 0..kh {
                    let dy = ky as isize - pad_y;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..kw {
                        let dx = kx as isize - pad_x;
                        let (x0, x1) = valid_range(w, dx);
                        if x0 >= x1 {
                            continue;
                        }
                        let wgt =
                            kernel[(((co * cin + ci) * kd + kz) * kh + ky) * kw + kx];
                        for z in z0..z1 {
                            let sz = (z as isize + dz) as usize;
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                let src = ((ci * d + sz) * h + sy) * w;
                                let dst = ((co * d + z) * h + y) * w;
                                let irow = &input[src + (x0 as isize + dx) as usize
                                    ..src + (x1 as isize + dx) as usize];
                                let orow = &mut out[dst + x0..dst + x1];
                                for (o, &i) in orow.iter_mut().zip(irow.iter()) {
                                    *o += wgt * i;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// 3D backward w.r.t. the input.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_backward_input(
    grad_out: &[f64],
    kernel: &[f64],
    cin: usize,
    d: usize,
    h: usize,
    w: usize,
    cout: usize,
    kd: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let mut grad_in = vec![0.0; cin * d * h * w];
    let pad_z = (kd / 2) as isize;
    let pad_y = (kh / 2) as isize;
    let pad_x = (kw / 2) as isize;
    for co in 0..cout {
        for ci in 0..cin {
            for kz in 0..kd {
                let dz = kz as isize - pad_z;
                let (z0, z1) = valid_range(d, dz);
                for ky in 0..kh {
                    let dy = ky as isize - pad_y;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..kw {
                        let dx = kx as isize - pad_x;
                        let (x0, x1) = valid_range(w, dx);
                        if x0 >= x1 {
                            continue;
                        }
                        let wgt =
                            kernel[(((co * cin + ci) * kd + kz) * kh + ky) * kw + kx];
                        for z in z0..z1 {
                            let sz = (z as isize + dz) as usize;
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                let gin = ((ci * d + sz) * h + sy) * w;
                                let gout = ((co * d + z) * h + y) * w;
                                let grow = &grad_out[gout + x0..gout + x1];
                                let irow = &mut grad_in[gin + (x0 as isize + dx) as usize
                                    ..gin + (x1 as isize + dx) as usize];
                                for (i, &g) in irow.iter_mut().zip(grow.iter()) {
                                    *i += wgt * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// 3D backward w.r.t. the kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_backward_kernel(
    grad_out: &[f64],
    input: &[f64],
    cin: usize,
    d: usize,
    h: usize,
    w: usize,
    cout: usize,
    kd: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let mut grad_k = vec![0.0; cout * cin * kd * kh * kw];
    let pad_z = (kd / 2) as isize;
    let pad_y = (kh / 2) as isize;
    let pad_x = (kw / 2) as isize;
    for co in 0..cout {
        for ci in 0..cin {
            for kz in 0..kd {
                let dz = kz as isize - pad_z;
                let (z0, z1) = valid_range(d, dz);
                for ky in 0..kh {
                    let dy = ky as isize - pad_y;
                    let (y0, y1) = valid_range(h, dy);
                    for kx in 0..kw {
                        let dx = kx as isize - pad_x;
                        let (x0, x1) = valid_range(w, dx);
                        if x0 >= x1 {
                            continue;
                        }
                        let mut acc = 0.0;
                        for z in z0..z1 {
                            let sz = (z as isize + dz) as usize;
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                let src = ((ci * d + sz) * h + sy) * w;
                                let dst = ((co * d + z) * h + y) * w;
                                let irow = &input[src + (x0 as isize + dx) as usize
                                    ..src + (x1 as isize + dx) as usize];
                                let grow = &grad_out[dst + x0..dst + x1];
                                for (&g, &i) in grow.iter().zip(irow.iter()) {
                                    acc += g * i;
                                }
                            }
                        }
                        grad_k[(((co * cin + ci) * kd + kz) * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        }
    }
    grad_k
}

/// Output index range `[lo, hi)` for which `index + shift` stays in `[0, extent)`.
#[inline]
fn valid_range(extent: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi_signed = extent as isize - shift.max(0);
    let hi = hi_signed.max(0) as usize;
    (lo.min(extent), hi.min(extent))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_cases() {
        assert_eq!(valid_range(5, 0), (0, 5));
        assert_eq!(valid_range(5, 1), (0, 4));
        assert_eq!(valid_range(5, -1), (1, 5));
        assert_eq!(valid_range(5, -5), (5, 5));
    }

    #[test]
    fn identity_kernel_is_identity() {
        // Centered delta kernel reproduces the input map.
        let (h, w) = (4, 5);
        let input: Vec<f64> = (0..h * w).map(|i| i as f64 * 0.3 - 2.0).collect();
        let mut kernel = vec![0.0; 9];
        kernel[4] = 1.0;
        let out = conv2d_forward(&input, 1, h, w, &kernel, 1, 3, 3);
        assert_eq!(out, input);
    }

    #[test]
    fn shifted_delta_kernel_shifts_with_zero_pad() {
        let (h, w) = (3, 3);
        let input: Vec<f64> = (1..=9).map(f64::from).collect();
        // Delta at (0, 1): output(y, x) = input(y - 1, x), zero at the top.
        let mut kernel = vec![0.0; 9];
        kernel[1] = 1.0;
        let out = conv2d_forward(&input, 1, h, w, &kernel, 1, 3, 3);
        assert_eq!(out, vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn identity_kernel_3d() {
        let (d, h, w) = (2, 3, 4);
        let input: Vec<f64> = (0..d * h * w).map(|i| (i as f64).cos()).collect();
        let mut kernel = vec![0.0; 27];
        kernel[13] = 1.0;
        let out = conv3d_forward(&input, 1, d, h, w, &kernel, 1, 3, 3, 3);
        assert_eq!(out, input);
    }
}
