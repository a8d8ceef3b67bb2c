//! Property tests for the cross-module invariants.

use proptest::prelude::*;

use rmloss_core::grid::{make_grid_2d, GridConvention};
use rmloss_core::loss::{mse_loss, rm_loss};
use rmloss_core::metrics::{dice_jaccard, hd95_asd, surface_points};
use rmloss_core::moments::{central_moment, MomentOrder};
use rmloss_core::tensor::{Mask, Tensor};

fn tensor_from(values: &[f64], h: usize, w: usize) -> Tensor {
    Tensor::new(vec![h, w], values[..h * w].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The order-(p,q) weighted residual loss equals the order-(2p,2q)
    /// central moment of the squared residual map.
    #[test]
    fn rm_loss_equals_doubled_central_moment(
        h in 1usize..12,
        w in 1usize..12,
        p in 0u32..3,
        q in 0u32..3,
        normalized in any::<bool>(),
        symmetric in any::<bool>(),
        values in prop::collection::vec(-1.0f64..1.0, 288),
    ) {
        let convention = if symmetric {
            GridConvention::Symmetric
        } else {
            GridConvention::Paper
        };
        let grid = make_grid_2d(h, w, convention, normalized).unwrap();
        let pred = tensor_from(&values, h, w);
        let target = tensor_from(&values[144..], h, w);
        let order = MomentOrder::two(p, q);

        let lhs = rm_loss(&pred, &target, &grid, &order).unwrap().value;
        let r2 = pred.zip_map(&target, |a, b| (a - b) * (a - b)).unwrap();
        let rhs = central_moment(&r2, &grid, &order.doubled()).unwrap();
        let rel = (lhs - rhs).abs() / (lhs.abs() + 1e-30);
        prop_assert!(rel <= 1e-10, "rel {rel} lhs {lhs} rhs {rhs}");
    }

    /// Central moments are linear in the image.
    #[test]
    fn central_moment_is_linear(
        h in 1usize..10,
        w in 1usize..10,
        p in 0u32..3,
        q in 0u32..3,
        a in -4.0f64..4.0,
        b in -4.0f64..4.0,
        values in prop::collection::vec(-1.0f64..1.0, 200),
    ) {
        let grid = make_grid_2d(h, w, GridConvention::Paper, true).unwrap();
        let f = tensor_from(&values, h, w);
        let g = tensor_from(&values[100..], h, w);
        let order = MomentOrder::two(p, q);

        let combined = f.zip_map(&g, |x, y| a * x + b * y).unwrap();
        let lhs = central_moment(&combined, &grid, &order).unwrap();
        let rhs = a * central_moment(&f, &grid, &order).unwrap()
            + b * central_moment(&g, &grid, &order).unwrap();
        let rel = (lhs - rhs).abs() / (lhs.abs().max(rhs.abs()) + 1e-12);
        prop_assert!(rel <= 1e-12, "rel {rel}");
    }

    /// On the symmetric grid, an odd coordinate order annihilates images
    /// that are flip-symmetric along that axis.
    #[test]
    fn odd_order_kills_flip_symmetric_images(
        h in 1usize..9,
        w in 1usize..9,
        values in prop::collection::vec(0.0f64..1.0, 81),
    ) {
        let grid = make_grid_2d(h, w, GridConvention::Symmetric, true).unwrap();
        let half = tensor_from(&values, h, w);
        // Symmetrize along axis 0.
        let f = Tensor::from_fn(&[h, w], |ix| {
            0.5 * (half.get(&[ix[0], ix[1]]) + half.get(&[h - 1 - ix[0], ix[1]]))
        });
        let m = central_moment(&f, &grid, &MomentOrder::two(1, 0)).unwrap();
        prop_assert!(m.abs() <= 1e-12, "moment {m}");
        let m3 = central_moment(&f, &grid, &MomentOrder::two(1, 2)).unwrap();
        prop_assert!(m3.abs() <= 1e-12, "moment {m3}");
    }

    /// Losses are non-negative, and order (0,0) collapses to MSE bit-exactly.
    #[test]
    fn losses_non_negative_and_zeroth_order_collapses(
        h in 1usize..10,
        w in 1usize..10,
        values in prop::collection::vec(-2.0f64..2.0, 200),
    ) {
        let grid = make_grid_2d(h, w, GridConvention::Paper, true).unwrap();
        let pred = tensor_from(&values, h, w);
        let target = tensor_from(&values[100..], h, w);
        for (p, q) in [(0, 0), (1, 0), (2, 2)] {
            let v = rm_loss(&pred, &target, &grid, &MomentOrder::two(p, q)).unwrap().value;
            prop_assert!(v >= 0.0);
        }
        let rm = rm_loss(&pred, &target, &grid, &MomentOrder::two(0, 0)).unwrap();
        let mse = mse_loss(&pred, &target).unwrap();
        prop_assert_eq!(rm.value.to_bits(), mse.value.to_bits());
        prop_assert_eq!(&rm.gradient, &mse.gradient);
    }

    /// Surface distances are symmetric under swapping the masks, exactly;
    /// dice and jaccard satisfy dice = 2j/(1+j).
    #[test]
    fn metric_symmetries(
        h in 2usize..12,
        w in 2usize..12,
        bits in prop::collection::vec(0u8..2, 288),
    ) {
        let a = Mask::new(vec![h, w], bits[..h * w].to_vec()).unwrap();
        let b = Mask::new(vec![h, w], bits[144..144 + h * w].to_vec()).unwrap();
        let (dice, jaccard) = dice_jaccard(&a, &b, 1).unwrap();
        prop_assert!((dice - 2.0 * jaccard / (1.0 + jaccard)).abs() <= 1e-12);

        if !surface_points(&a, 1).is_empty() && !surface_points(&b, 1).is_empty() {
            let ab = hd95_asd(&a, &b, 1).unwrap();
            let ba = hd95_asd(&b, &a, 1).unwrap();
            prop_assert_eq!(ab, ba);
        }
    }

    /// Grid axis tensors are constant along all other axes, and the
    /// symmetric convention negates exactly under flips.
    #[test]
    fn grid_constancy_and_flip(
        h in 1usize..16,
        w in 1usize..16,
        normalized in any::<bool>(),
    ) {
        let grid = make_grid_2d(h, w, GridConvention::Symmetric, normalized).unwrap();
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(grid.axis(0).get(&[y, x]), grid.axis_value(0, y));
                prop_assert_eq!(grid.axis(1).get(&[y, x]), grid.axis_value(1, x));
            }
        }
        for y in 0..h {
            prop_assert_eq!(grid.axis_value(0, y), -grid.axis_value(0, h - 1 - y));
        }
    }
}
