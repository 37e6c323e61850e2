//! Synthetic stand-ins for the target dataset and the background image set.
//!
//! Labeled images are a procedural background texture with one flat-colored
//! shape painted on top; the painted pixels are the exact ground-truth mask.
//! Background images use the same texture families with no shape.

mod dataset;
pub mod pnm;
mod shapes;
mod texture;

pub use dataset::{
    class_names, gen_data, load_dataset, load_split, Dataset, DatasetManifest, DatasetMeta, GenDataParams,
    ManifestRecord, Split,
};
pub use shapes::{Placement, ShapeKind};
pub use texture::TextureFamily;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::BBox;
use crate::rng::{stream, Rng};
use crate::saliency::BinaryMask;
use crate::tensor::kernels::{resample_plane, AxisMap};
use crate::tensor::{Real, Tensor};

pub const CHANNELS: usize = 3;
/// Fraction of the image a shape covers, inclusive range.
pub const AREA_RANGE: (f64, f64) = (0.10, 0.40);
/// Minimum RGB distance between the fill color and the local background mean.
pub const MIN_CONTRAST: f64 = 0.3;

/// One dataset record with exact ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// Planar `[3, H, W]` 8-bit samples; the real value is `v / 255`.
    pub pixels: Vec<u8>,
    pub label: Option<usize>,
    pub is_background: bool,
    pub gt_box: Option<BBox>,
    pub gt_mask: Option<BinaryMask>,
}

impl ImageSample {
    pub fn value(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.height + y) * self.width + x] as f64 / 255.0
    }

    /// Pixels as reals in `[0, 1]`, planar.
    pub fn to_reals<T: Real>(&self) -> Vec<T> {
        self.pixels.iter().map(|&v| T::from_f64(v as f64 / 255.0)).collect()
    }

    /// Checks the record-level invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Dataset(format!("{}: {m}", self.id)));
        if self.pixels.len() != CHANNELS * self.width * self.height {
            return bad("pixel buffer does not match dimensions");
        }
        if self.is_background && (self.label.is_some() || self.gt_box.is_some()) {
            return bad("background image carries a label or box");
        }
        if let Some(b) = &self.gt_box {
            if !b.within(self.width, self.height) {
                return bad("box exceeds image bounds");
            }
        }
        if let Some(m) = &self.gt_mask {
            if m.width() != self.width || m.height() != self.height {
                return bad("mask size differs from image size");
            }
            if m.tight_box() != self.gt_box {
                return bad("box is not the tight box of the mask");
            }
        }
        Ok(())
    }
}

/// Quantizes a planar `[0, 1]` canvas to 8 bits.
fn quantize(canvas: &[f64]) -> Vec<u8> {
    canvas.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

fn background_canvas(rng: &mut Rng, width: usize, height: usize) -> (TextureFamily, Vec<f64>) {
    let family = TextureFamily::ALL[rng.random_range(0..TextureFamily::ALL.len())];
    (family, texture::render(family, width, height, rng))
}

/// A background-only image from the `index`-th stream of `seed`, and its
/// texture family.
pub fn background_sample(seed: u64, index: usize, width: usize, height: usize) -> (ImageSample, TextureFamily) {
    let mut rng = stream(seed, "background", index as u64);
    let (family, canvas) = background_canvas(&mut rng, width, height);
    let sample = ImageSample {
        id: format!("bg{index:06}"),
        width,
        height,
        pixels: quantize(&canvas),
        label: None,
        is_background: true,
        gt_box: None,
        gt_mask: None,
    };
    (sample, family)
}

/// `count` background-only images; a pure function of the arguments.
pub fn gen_background(seed: u64, count: usize, width: usize, height: usize) -> Vec<ImageSample> {
    (0..count).map(|i| background_sample(seed, i, width, height).0).collect()
}

/// Shape drawn for a class: the first eight classes map onto the eight
/// shapes; classes 8..16 reuse them with a striped fill.
pub fn shape_for_class(class: usize) -> (ShapeKind, bool) {
    (ShapeKind::ALL[class % ShapeKind::ALL.len()], class >= ShapeKind::ALL.len())
}

fn place_shape(rng: &mut Rng, kind: ShapeKind, width: usize, height: usize) -> (Placement, Vec<u8>) {
    let total = (width * height) as f64;
    let vertical = rng.random_bool(0.5);
    let target = rng.random_range(AREA_RANGE.0..AREA_RANGE.1);
    // Largest scale whose extent fits with a one-pixel margin.
    let (ux, uy) = kind.half_extent(1.0, vertical);
    let r_fit = ((width as f64 - 2.0) / (2.0 * ux)).min((height as f64 - 2.0) / (2.0 * uy));
    let mut r = (target * total / kind.area_factor()).sqrt().min(r_fit);
    loop {
        let (hx, hy) = kind.half_extent(r, vertical);
        let cx = rng.random_range(hx + 1.0..=width as f64 - hx - 1.0);
        let cy = rng.random_range(hy + 1.0..=height as f64 - hy - 1.0);
        let p = Placement { kind, cx, cy, r, vertical };
        // Tips thinner than a pixel can leave diagonal-only islands; only the
        // main 4-connected body is painted, so it alone defines the box.
        let mask = crate::components::keep_largest(&p.rasterize(width, height), width, height)
            .unwrap_or_else(|| vec![0; width * height]);
        let frac = mask.iter().filter(|&&v| v == 1).count() as f64 / total;
        if frac < AREA_RANGE.0 {
            r *= 1.02;
        } else if frac > AREA_RANGE.1 {
            r *= 0.98;
        } else {
            return (p, mask);
        }
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// A random color at least [`MIN_CONTRAST`] away from `mean`.
fn contrasting_color(rng: &mut Rng, mean: [f64; 3]) -> [f64; 3] {
    for _ in 0..64 {
        let c = [
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
            rng.random_range(0.05..0.95),
        ];
        if distance(c, mean) >= MIN_CONTRAST {
            return c;
        }
    }
    mean.map(|m| if m < 0.5 { 0.95 } else { 0.05 })
}

/// A labeled image: the `index`-th stream of `seed`, class `index mod n`.
pub fn labeled_sample(seed: u64, index: usize, n_classes: usize, width: usize, height: usize) -> ImageSample {
    let mut rng = stream(seed, "labeled", index as u64);
    let label = index % n_classes;
    let (kind, striped) = shape_for_class(label);
    let (_, mut canvas) = background_canvas(&mut rng, width, height);
    let (_, mask) = place_shape(&mut rng, kind, width, height);

    let plane = width * height;
    let inside: Vec<usize> = (0..plane).filter(|&i| mask[i] == 1).collect();
    let mut mean = [0.0; 3];
    for (c, m) in mean.iter_mut().enumerate() {
        *m = inside.iter().map(|&i| canvas[c * plane + i]).sum::<f64>() / inside.len() as f64;
    }
    let fill = contrasting_color(&mut rng, mean);
    let alt = if striped { contrasting_color(&mut rng, mean) } else { fill };
    for &i in &inside {
        let (y, x) = (i / width, i % width);
        let col = if striped && ((x + y) / 3) % 2 == 1 { alt } else { fill };
        for c in 0..CHANNELS {
            canvas[c * plane + i] = col[c];
        }
    }
    let gt_mask = BinaryMask::new(width, height, mask).expect("rasterized mask is binary");
    ImageSample {
        id: format!("img{index:06}"),
        width,
        height,
        pixels: quantize(&canvas),
        label: Some(label),
        is_background: false,
        gt_box: gt_mask.tight_box(),
        gt_mask: Some(gt_mask),
    }
}

/// `count` labeled images; a pure function of the arguments.
pub fn gen_labeled(seed: u64, count: usize, n_classes: usize, width: usize, height: usize) -> Result<Vec<ImageSample>> {
    if !(2..=16).contains(&n_classes) {
        return Err(Error::invalid(format!("n_classes must lie in [2, 16], got {n_classes}")));
    }
    if width < 16 || height < 16 {
        return Err(Error::invalid("images must be at least 16x16"));
    }
    Ok((0..count)
        .map(|i| labeled_sample(seed, i, n_classes, width, height))
        .collect())
}

/// Per-channel statistics used to standardize network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.5; 3],
            std: [0.25; 3],
        }
    }
}

impl Normalization {
    /// Standardizes a planar `[3, plane]` image in place.
    pub fn apply(&self, img: &mut [f64], plane: usize) {
        for c in 0..CHANNELS {
            for v in &mut img[c * plane..(c + 1) * plane] {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
    }

    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a ImageSample>) -> Self {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0usize;
        for s in samples {
            let plane = s.width * s.height;
            for c in 0..CHANNELS {
                for &v in &s.pixels[c * plane..(c + 1) * plane] {
                    let v = v as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += plane;
        }
        if count == 0 {
            return Self::default();
        }
        let n = count as f64;
        let mean = sum.map(|s| s / n);
        let mut std = [0.0; 3];
        for c in 0..3 {
            std[c] = (sq[c] / n - mean[c] * mean[c]).max(1e-12).sqrt();
        }
        Normalization { mean, std }
    }
}

/// Stacks samples into an `[N, 3, height, width]` batch: bilinear resize
/// when the size differs, then per-channel standardization if `norm` is set.
pub fn input_batch<T: Real>(
    samples: &[&ImageSample],
    norm: Option<&Normalization>,
    height: usize,
    width: usize,
) -> Result<Tensor<T>> {
    if samples.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let plane = height * width;
    let mut data = Vec::with_capacity(samples.len() * CHANNELS * plane);
    for s in samples {
        let src: Vec<f64> = s.pixels.iter().map(|&v| v as f64 / 255.0).collect();
        let mut img = if (s.height, s.width) == (height, width) {
            src
        } else {
            let (ys, xs) = (AxisMap::new(s.height, height), AxisMap::new(s.width, width));
            let mut out = vec![0.0; CHANNELS * plane];
            let sp = s.width * s.height;
            for c in 0..CHANNELS {
                resample_plane(&src[c * sp..(c + 1) * sp], s.width, &ys, &xs, &mut out[c * plane..(c + 1) * plane]);
            }
            out
        };
        if let Some(n) = norm {
            n.apply(&mut img, plane);
        }
        data.extend(img.into_iter().map(T::from_f64));
    }
    Tensor::new(vec![samples.len(), CHANNELS, height, width], data)
}
