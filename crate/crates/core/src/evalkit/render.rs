//! Box overlays for visual inspection.

use super::BBox;
use crate::synthdata::ImageSample;

/// Outlines `b` on `plane` (one channel of a planar image) with value 255.
fn outline(plane: &mut [u8], width: usize, b: &BBox) {
    for x in b.x0..b.x1 {
        plane[b.y0 * width + x] = 255;
        plane[(b.y1 - 1) * width + x] = 255;
    }
    for y in b.y0..b.y1 {
        plane[y * width + b.x0] = 255;
        plane[y * width + b.x1 - 1] = 255;
    }
}

/// The sample as planar RGB with the ground-truth box drawn into the green
/// plane and the predicted box into the red plane.
pub fn overlay(sample: &ImageSample, predicted: Option<&BBox>) -> Vec<u8> {
    let (w, h) = (sample.width, sample.height);
    let mut px = sample.pixels.clone();
    let (red, rest) = px.split_at_mut(w * h);
    if let Some(gt) = &sample.gt_box {
        outline(&mut rest[..w * h], w, gt);
    }
    if let Some(p) = predicted {
        outline(red, w, p);
    }
    px
}

/// Planar to interleaved channel order, as PPM expects.
pub fn interleave(planar: &[u8], channels: usize) -> Vec<u8> {
    let n = planar.len() / channels;
    (0..n)
        .flat_map(|i| (0..channels).map(move |c| planar[c * n + i]))
        .collect()
}
