//! Contour overlays: grayscale image with ground-truth contours in green
//! and predicted contours in blue, written as 8-bit PPM.

use std::path::Path;

use rmloss_core::data::pgm::write_ppm;
use rmloss_core::metrics::surface_points;
use rmloss_core::tensor::{Mask, Tensor};
use rmloss_core::Result;

const TRUTH_COLOR: [u8; 3] = [0, 255, 0];
const PREDICTION_COLOR: [u8; 3] = [0, 0, 255];

fn nested_region(mask: &Mask, class_id: u8) -> Mask {
    let data = mask.data().iter().map(|&v| (v >= class_id) as u8).collect();
    Mask::new(mask.shape().to_vec(), data).expect("shape preserved")
}

/// Render one 2D sample: image as gray, contours recolored.
pub fn write_overlay(
    path: &Path,
    image: &Tensor,
    target: &Mask,
    pred: &Mask,
    num_classes: usize,
) -> Result<()> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut rgb = vec![0u8; h * w * 3];
    for (i, &v) in image.data().iter().enumerate() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        rgb[3 * i] = g;
        rgb[3 * i + 1] = g;
        rgb[3 * i + 2] = g;
    }
    let mut paint = |mask: &Mask, color: [u8; 3]| {
        for class_id in 1..num_classes as u8 {
            let region = nested_region(mask, class_id);
            for p in surface_points(&region, 1) {
                let i = p[0] as usize * w + p[1] as usize;
                rgb[3 * i] = color[0];
                rgb[3 * i + 1] = color[1];
                rgb[3 * i + 2] = color[2];
            }
        }
    };
    paint(target, TRUTH_COLOR);
    paint(pred, PREDICTION_COLOR);
    write_ppm(path, w, h, &rgb)
}
