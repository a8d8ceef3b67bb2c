//! Executable property suite.
//!
//! Each check returns a [`CheckResult`] so callers (the CLI `verify`
//! command, the acceptance tests) can render and gate on them. The oracles
//! here are deliberately independent of the code paths they check: surface
//! distances get a full-matrix brute force with its own percentile code,
//! losses and network gradients get central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::autodiff::Graph;
use crate::error::Result;
use crate::eval::prepare_input;
use crate::gradcheck::{finite_diff_grad, max_relative_error, FD_STEP};
use crate::grid::{cached_grid, make_grid_2d, make_grid_3d, GridConvention};
use crate::loss::{ce_loss, dice_loss, mse_loss, rm_loss, rm_loss_multi, total_loss, RmConfig,
    DICE_SMOOTH};
use crate::metrics::{dice_jaccard, hd95_asd, surface_points};
use crate::moments::{central_moment, MomentOrder};
use crate::nn::UNetLite;
use crate::tensor::{softmax_channels, Mask, Tensor};

/// Outcome of one named check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckResult {
            name,
            passed,
            detail,
        }
    }
}

fn random_tensor(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Loss-equivalence check: the order-(p,q) coordinate-weighted residual loss
/// must equal the order-(2p,2q) central moment of the squared residual map,
/// within `rel_tol` relative, across random shapes, orders, conventions.
pub fn theorem_equivalence(
    trials_2d: usize,
    trials_3d: usize,
    rel_tol: f64,
    seed: u64,
) -> CheckResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let conventions = [GridConvention::Paper, GridConvention::Symmetric];

    for trial in 0..(trials_2d + trials_3d) {
        let three_d = trial >= trials_2d;
        let convention = conventions[rng.random_range(0..2)];
        let normalized = rng.random_range(0..2) == 0;
        let (shape, order) = if three_d {
            let d = rng.random_range(1..=9);
            let h = rng.random_range(1..=10);
            let w = rng.random_range(1..=11);
            (
                vec![d, h, w],
                MomentOrder::three(
                    rng.random_range(0..3),
                    rng.random_range(0..3),
                    rng.random_range(0..3),
                ),
            )
        } else {
            let h = rng.random_range(1..=33);
            let w = rng.random_range(1..=29);
            (
                vec![h, w],
                MomentOrder::two(rng.random_range(0..3), rng.random_range(0..3)),
            )
        };
        let grid = if three_d {
            make_grid_3d(shape[0], shape[1], shape[2], convention, normalized)
        } else {
            make_grid_2d(shape[0], shape[1], convention, normalized)
        }
        .expect("valid grid");
        let pred = random_tensor(&mut rng, &shape);
        let target = random_tensor(&mut rng, &shape);

        let lhs = rm_loss(&pred, &target, &grid, &order)
            .expect("rm_loss on valid inputs")
            .value;
        let r2 = pred
            .zip_map(&target, |a, b| (a - b) * (a - b))
            .expect("same shape");
        let rhs = central_moment(&r2, &grid, &order.doubled()).expect("valid moment");
        let rel = (lhs - rhs).abs() / (lhs.abs() + 1e-30);
        if rel > max_rel {
            max_rel = rel;
            worst = format!(
                "shape {:?} order {:?} {:?} normalized={} lhs={} rhs={}",
                shape,
                order.components(),
                convention,
                normalized,
                lhs,
                rhs
            );
        }
    }
    CheckResult::new(
        "theorem_equivalence",
        max_rel <= rel_tol,
        format!(
            "{} trials (2D {trials_2d}, 3D {trials_3d}), max rel err {max_rel:.3e} \
             (tol {rel_tol:.0e}); worst: {worst}",
            trials_2d + trials_3d
        ),
    )
}

/// Order-(0,0) residual-moment loss must equal the MSE loss bit for bit.
pub fn mse_collapse(trials: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut failures = 0usize;
    for _ in 0..trials {
        let h = rng.random_range(1..=16);
        let w = rng.random_range(1..=16);
        let grid = make_grid_2d(h, w, GridConvention::Paper, true).expect("valid grid");
        let pred = random_tensor(&mut rng, &[h, w]);
        let target = random_tensor(&mut rng, &[h, w]);
        let rm = rm_loss(&pred, &target, &grid, &MomentOrder::two(0, 0)).expect("rm");
        let mse = mse_loss(&pred, &target).expect("mse");
        if rm.value.to_bits() != mse.value.to_bits() || rm.gradient != mse.gradient {
            failures += 1;
        }
    }
    CheckResult::new(
        "mse_collapse",
        failures == 0,
        format!("{trials} random pairs, {failures} bit-level mismatches"),
    )
}

/// Finite-difference checks for every loss, at `tol` max relative error.
pub fn loss_gradient_checks(trials: usize, tol: f64, seed: u64) -> CheckResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    let mut worst = "";

    // RM with every preset order set.
    let order_sets: Vec<(&str, RmConfig)> = vec![
        ("rm[(0,0)]", RmConfig::new(vec![MomentOrder::two(0, 0)], 1.0)),
        ("rm[2d-best]", RmConfig::default_2d()),
        ("rm[3d-best]", RmConfig::default_3d()),
    ];
    for (label, cfg) in &order_sets {
        for _ in 0..trials {
            let shape: Vec<usize> = if cfg.rank() == 2 {
                vec![rng.random_range(2..7), rng.random_range(2..7)]
            } else {
                vec![
                    rng.random_range(2..5),
                    rng.random_range(2..5),
                    rng.random_range(2..5),
                ]
            };
            let grid = cached_grid(&shape, cfg.convention, cfg.normalized).expect("grid");
            let pred = random_tensor(&mut rng, &shape);
            let target = random_tensor(&mut rng, &shape);
            let lv = rm_loss_multi(&pred, &target, &grid, cfg).expect("rm multi");
            let fd = finite_diff_grad(&pred, FD_STEP, |p| {
                rm_loss_multi(p, &target, &grid, cfg).expect("rm multi").value
            });
            let err = max_relative_error(lv.gradient.data(), fd.data());
            if err > max_err {
                max_err = err;
                worst = label;
            }
        }
    }

    for _ in 0..trials {
        let (h, w) = (rng.random_range(2..6), rng.random_range(2..6));
        let pred = Tensor::from_fn(&[h, w], |_| rng.random_range(0.05..0.95));
        let target = Tensor::from_fn(&[h, w], |_| f64::from(rng.random_range(0..2)));
        let lv = dice_loss(&pred, &target, DICE_SMOOTH).expect("dice");
        let fd = finite_diff_grad(&pred, FD_STEP, |p| {
            dice_loss(p, &target, DICE_SMOOTH).expect("dice").value
        });
        let err = max_relative_error(lv.gradient.data(), fd.data());
        if err > max_err {
            max_err = err;
            worst = "dice";
        }
    }

    for _ in 0..trials {
        let (c, h, w) = (
            rng.random_range(2..4),
            rng.random_range(2..5),
            rng.random_range(2..5),
        );
        let logits = random_tensor(&mut rng, &[c, h, w]);
        let labels: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..c) as u8).collect();
        let mask = Mask::new(vec![h, w], labels).expect("mask");
        let lv = ce_loss(&logits, &mask).expect("ce");
        let fd = finite_diff_grad(&logits, FD_STEP, |z| ce_loss(z, &mask).expect("ce").value);
        let err = max_relative_error(lv.gradient.data(), fd.data());
        if err > max_err {
            max_err = err;
            worst = "ce";
        }
    }

    for _ in 0..trials {
        let (c, h, w) = (3, 4, 5);
        let grid = cached_grid(&[h, w], GridConvention::Paper, true).expect("grid");
        let cfg = RmConfig::default_2d();
        let logits = random_tensor(&mut rng, &[c, h, w]);
        let labels: Vec<u8> = (0..h * w).map(|_| rng.random_range(0..c) as u8).collect();
        let mask = Mask::new(vec![h, w], labels).expect("mask");
        let prob = softmax_channels(&logits).expect("softmax");
        let lv = total_loss(&logits, &prob, &mask, &grid, &cfg).expect("total");
        let fd = finite_diff_grad(&logits, FD_STEP, |z| {
            let p = softmax_channels(z).expect("softmax");
            total_loss(z, &p, &mask, &grid, &cfg).expect("total").value
        });
        let err = max_relative_error(lv.gradient.data(), fd.data());
        if err > max_err {
            max_err = err;
            worst = "total";
        }
    }

    CheckResult::new(
        "loss_gradients",
        max_err <= tol,
        format!(
            "{trials} trials per loss, max rel err {max_err:.3e} (tol {tol:.0e}, worst: {worst})"
        ),
    )
}

/// Finite-difference checks for every autodiff op, at `tol`.
pub fn op_gradient_checks(tol: f64, seed: u64) -> CheckResult {
    type Build = Box<dyn Fn(&mut Graph, crate::autodiff::NodeId) -> Result<crate::autodiff::NodeId>>;
    let cases: Vec<(&str, Vec<usize>, Build)> = vec![
        ("add", vec![2, 4, 4], Box::new(|g, x| g.add(x, x))),
        ("mul", vec![2, 4, 4], Box::new(|g, x| g.mul(x, x))),
        ("sum", vec![2, 4, 4], Box::new(|g, x| g.sum(x))),
        ("mean", vec![2, 4, 4], Box::new(|g, x| g.mean(x))),
        ("relu", vec![2, 4, 4], Box::new(|g, x| g.relu(x))),
        ("sigmoid", vec![2, 4, 4], Box::new(|g, x| g.sigmoid(x))),
        (
            "softmax_channels",
            vec![3, 3, 3],
            Box::new(|g, x| g.softmax_channels(x)),
        ),
        ("maxpool2_2d", vec![2, 4, 4], Box::new(|g, x| g.maxpool2(x))),
        ("maxpool2_3d", vec![2, 4, 4, 4], Box::new(|g, x| g.maxpool2(x))),
        (
            "upsample_2d",
            vec![2, 3, 3],
            Box::new(|g, x| g.upsample_nearest2(x)),
        ),
        (
            "upsample_3d",
            vec![1, 2, 3, 2],
            Box::new(|g, x| g.upsample_nearest2(x)),
        ),
        (
            "concat_channels",
            vec![2, 3, 3],
            Box::new(|g, x| g.concat_channels(x, x)),
        ),
        (
            "dropout",
            vec![2, 4, 4],
            Box::new(|g, x| g.dropout(x, 0.4, true, 77)),
        ),
        (
            "conv2d",
            vec![2, 5, 4],
            Box::new(|g, x| {
                let k = g.leaf(
                    Tensor::from_fn(&[3, 2, 3, 3], |ix| {
                        ((ix[0] * 31 + ix[1] * 7 + ix[2] * 3 + ix[3]) as f64 * 0.37).sin() * 0.5
                    }),
                    false,
                );
                g.conv(x, k)
            }),
        ),
        (
            "conv3d",
            vec![1, 3, 4, 3],
            Box::new(|g, x| {
                let k = g.leaf(
                    Tensor::from_fn(&[2, 1, 3, 3, 3], |ix| {
                        ((ix[0] * 53 + ix[2] * 9 + ix[3] * 3 + ix[4]) as f64 * 0.29).cos() * 0.5
                    }),
                    false,
                );
                g.conv(x, k)
            }),
        ),
        (
            "bias_add",
            vec![3, 4, 4],
            Box::new(|g, x| {
                let b = g.leaf(Tensor::new(vec![3], vec![0.3, -0.2, 0.7]).unwrap(), false);
                g.bias_add(x, b)
            }),
        ),
    ];

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    let mut worst = "";
    for (name, shape, build) in &cases {
        let x = random_tensor(&mut rng, shape);
        let mut g = Graph::new();
        let xid = g.leaf(x.clone(), true);
        let out = build(&mut g, xid).expect("op builds");
        let r = random_tensor(&mut rng, g.value(out).shape());
        g.backward_seeded(out, r.clone()).expect("backward");
        let analytic = g.grad(xid).expect("leaf gradient").clone();
        let fd = finite_diff_grad(&x, FD_STEP, |probe| {
            let mut g2 = Graph::new();
            let x2 = g2.leaf(probe.clone(), false);
            let o2 = build(&mut g2, x2).expect("op builds");
            g2.value(o2)
                .data()
                .iter()
                .zip(r.data())
                .map(|(&v, &rv)| v * rv)
                .sum()
        });
        let err = max_relative_error(analytic.data(), fd.data());
        if err > max_err {
            max_err = err;
            worst = name;
        }
    }
    CheckResult::new(
        "op_gradients",
        max_err <= tol,
        format!(
            "{} ops, max rel err {max_err:.3e} (tol {tol:.0e}, worst: {worst})",
            cases.len()
        ),
    )
}

/// Analytic parameter gradients for one (model, sample) pair, via the graph.
fn model_param_grads(
    model: &UNetLite,
    input: &Tensor,
    mask: &Mask,
    cfg: &RmConfig,
    dropout_seed: u64,
) -> Result<(f64, Vec<Tensor>)> {
    let grid = cached_grid(mask.shape(), cfg.convention, cfg.normalized)?;
    let mut g = Graph::new();
    let image_node = g.leaf(input.clone(), false);
    let tape = model.build_graph(&mut g, image_node, true, dropout_seed, true)?;
    let logits = g.value(tape.logits).clone();
    let prob = softmax_channels(&logits)?;
    let lv = total_loss(&logits, &prob, mask, &grid, cfg)?;
    g.backward_seeded(tape.logits, lv.gradient)?;
    let grads = tape
        .param_nodes
        .iter()
        .zip(model.params())
        .map(|(&pid, p)| {
            g.grad(pid)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.tensor.shape()))
        })
        .collect();
    Ok((lv.value, grads))
}

#[allow(clippy::too_many_arguments)]
fn total_for_perturbed(
    model: &UNetLite,
    param_index: usize,
    element: usize,
    value: f64,
    input: &Tensor,
    mask: &Mask,
    cfg: &RmConfig,
    dropout_seed: u64,
) -> f64 {
    let mut probe = model.clone();
    let mut grads: Vec<Tensor> = probe
        .params()
        .iter()
        .map(|p| Tensor::zeros(p.tensor.shape()))
        .collect();
    let old = probe.params()[param_index].tensor.data()[element];
    grads[param_index].data_mut()[element] = value - old;
    probe.apply_update(&grads, 1.0).expect("update applies");
    let grid = cached_grid(mask.shape(), cfg.convention, cfg.normalized).expect("grid");
    let logits = probe.forward(input, true, dropout_seed).expect("forward");
    let prob = softmax_channels(&logits).expect("softmax");
    total_loss(&logits, &prob, mask, &grid, cfg)
        .expect("total")
        .value
}

/// End-to-end parameter gradient check against finite differences on a
/// random sample of at least 1% of parameter elements (at least two per
/// tensor), in 2D and 3D.
pub fn unet_e2e_gradient_check(tol: f64, seed: u64) -> CheckResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    let mut sampled_total = 0usize;
    let mut detail_dims = String::new();

    for dims in [2usize, 3] {
        let mut model = if dims == 2 {
            UNetLite::new(2, 1, 3, [2, 3, 4], 0.1, seed).expect("model")
        } else {
            UNetLite::new(3, 1, 2, [2, 2, 3], 0.1, seed + 1).expect("model")
        };
        // Jitter every parameter (biases start at exactly 0) so no ReLU
        // pre-activation sits on its kink: finite differences straddle the
        // kink and disagree with any subgradient choice there.
        let jitter: Vec<Tensor> = model
            .params()
            .iter()
            .map(|p| Tensor::from_fn(p.tensor.shape(), |_| rng.random_range(-0.05..0.05)))
            .collect();
        model.apply_update(&jitter, 1.0).expect("jitter applies");
        let spatial: Vec<usize> = if dims == 2 { vec![8, 8] } else { vec![4, 4, 8] };
        let image = Tensor::from_fn(&spatial, |_| rng.random_range(0.0..1.0));
        let labels: Vec<u8> = (0..image.len())
            .map(|_| rng.random_range(0..model.num_classes()) as u8)
            .collect();
        let mask = Mask::new(spatial.clone(), labels).expect("mask");
        let cfg = if dims == 2 {
            RmConfig::default_2d()
        } else {
            RmConfig::default_3d()
        };
        let input = prepare_input(dims, &image).expect("input");
        let dropout_seed = 1234;

        let (_, analytic) =
            model_param_grads(&model, &input, &mask, &cfg, dropout_seed).expect("grads");

        let mut sampled_analytic = Vec::new();
        let mut sampled_fd = Vec::new();
        for (pi, p) in model.params().iter().enumerate() {
            let len = p.tensor.len();
            let n_samples = (len / 100).max(2).min(len);
            for _ in 0..n_samples {
                let ei = rng.random_range(0..len);
                let base = p.tensor.data()[ei];
                let plus = total_for_perturbed(
                    &model,
                    pi,
                    ei,
                    base + FD_STEP,
                    &input,
                    &mask,
                    &cfg,
                    dropout_seed,
                );
                let minus = total_for_perturbed(
                    &model,
                    pi,
                    ei,
                    base - FD_STEP,
                    &input,
                    &mask,
                    &cfg,
                    dropout_seed,
                );
                sampled_fd.push((plus - minus) / (2.0 * FD_STEP));
                sampled_analytic.push(analytic[pi].data()[ei]);
                sampled_total += 1;
            }
        }
        let err = max_relative_error(&sampled_analytic, &sampled_fd);
        detail_dims.push_str(&format!("{dims}D err {err:.3e}; "));
        max_err = max_err.max(err);
    }

    CheckResult::new(
        "unet_e2e_gradients",
        max_err <= tol,
        format!("{sampled_total} sampled parameters, {detail_dims}tol {tol:.0e}"),
    )
}

/// Independent brute-force surface-distance computation: full distance
/// matrix, early square roots, directed minima, its own percentile code.
pub fn oracle_hd95_asd(pred: &Mask, target: &Mask, class_id: u8) -> Option<(f64, f64)> {
    let a = surface_points(pred, class_id);
    let b = surface_points(target, class_id);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let dist = |p: &[i64; 3], q: &[i64; 3]| -> f64 {
        let d0 = (p[0] - q[0]) as f64;
        let d1 = (p[1] - q[1]) as f64;
        let d2 = (p[2] - q[2]) as f64;
        (d0 * d0 + d1 * d1 + d2 * d2).sqrt()
    };
    let matrix: Vec<Vec<f64>> = a
        .iter()
        .map(|p| b.iter().map(|q| dist(p, q)).collect())
        .collect();
    let mut pooled: Vec<f64> = Vec::with_capacity(a.len() + b.len());
    for row in &matrix {
        pooled.push(row.iter().copied().fold(f64::INFINITY, f64::min));
    }
    for j in 0..b.len() {
        pooled.push(
            matrix
                .iter()
                .map(|row| row[j])
                .fold(f64::INFINITY, f64::min),
        );
    }
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let asd = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let rank = 0.95 * (pooled.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let hd95 = if lo == hi {
        pooled[lo]
    } else {
        pooled[lo] + (rank - lo as f64) * (pooled[hi] - pooled[lo])
    };
    Some((hd95, asd))
}

/// Production surface metrics must match the brute-force oracle exactly;
/// dice/jaccard must match direct set counts exactly.
pub fn metric_oracle(cases: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    let mut checked_surfaces = 0usize;
    for _ in 0..cases {
        let h = rng.random_range(2..=24);
        let w = rng.random_range(2..=24);
        let density = rng.random_range(0.1..0.5);
        let mut pred = Mask::zeros(&[h, w]);
        let mut target = Mask::zeros(&[h, w]);
        for v in pred.data_mut() {
            *v = (rng.random::<f64>() < density) as u8;
        }
        for v in target.data_mut() {
            *v = (rng.random::<f64>() < density) as u8;
        }

        // Dice/Jaccard against direct set counts.
        let inter = pred
            .data()
            .iter()
            .zip(target.data())
            .filter(|(&p, &t)| p == 1 && t == 1)
            .count();
        let na = pred.count(1);
        let nb = target.count(1);
        let (dice, jaccard) = dice_jaccard(&pred, &target, 1).expect("dice");
        let (expect_dice, expect_jaccard) = if na + nb == 0 {
            (1.0, 1.0)
        } else {
            (
                2.0 * inter as f64 / (na + nb) as f64,
                inter as f64 / (na + nb - inter) as f64,
            )
        };
        if dice != expect_dice || jaccard != expect_jaccard {
            mismatches += 1;
        }

        match (
            hd95_asd(&pred, &target, 1),
            oracle_hd95_asd(&pred, &target, 1),
        ) {
            (Ok((h1, a1)), Some((h2, a2))) => {
                checked_surfaces += 1;
                if h1.to_bits() != h2.to_bits() || a1.to_bits() != a2.to_bits() {
                    mismatches += 1;
                }
            }
            (Err(_), None) => {}
            _ => mismatches += 1,
        }
    }
    CheckResult::new(
        "metric_oracle",
        mismatches == 0,
        format!(
            "{cases} random mask pairs ({checked_surfaces} with non-empty surfaces), \
             {mismatches} mismatches"
        ),
    )
}

/// Full suite at the counts used by the verify command.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        theorem_equivalence(150, 60, 1e-10, 101),
        mse_collapse(50, 102),
        loss_gradient_checks(20, 1e-4, 103),
        op_gradient_checks(1e-4, 104),
        unet_e2e_gradient_check(1e-3, 105),
        metric_oracle(100, 106),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        for check in run_all() {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
    }
}
