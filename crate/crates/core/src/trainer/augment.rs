//! Training-time augmentation: random resized crop, flips, color jitter,
//! then standardization. Every random draw is recorded in a [`Transform`]
//! so the geometric part can be replayed onto masks.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::saliency::BinaryMask;
use crate::synthdata::{ImageSample, Normalization, CHANNELS};
use crate::tensor::kernels::{resample_plane, AxisMap};
use crate::tensor::{Real, Tensor};

pub const CROP_AREA: (f64, f64) = (0.6, 1.0);
pub const CROP_ASPECT: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);
pub const JITTER: (f64, f64) = (0.6, 1.4);
const CROP_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentToggles {
    pub crop: bool,
    pub flip: bool,
    pub color: bool,
}

impl Default for AugmentToggles {
    fn default() -> Self {
        AugmentToggles {
            crop: true,
            flip: true,
            color: true,
        }
    }
}

impl AugmentToggles {
    pub const OFF: AugmentToggles = AugmentToggles {
        crop: false,
        flip: false,
        color: false,
    };
}

/// Crop window in source pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
}

/// The random choices behind one augmented view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub crop: Window,
    pub hflip: bool,
    pub vflip: bool,
    pub brightness: f64,
    pub saturation: f64,
    /// Hue proxy: rotation of the color about the gray axis by
    /// `(hue - 1) * pi / 4`.
    pub hue: f64,
}

impl Transform {
    pub fn identity(width: usize, height: usize) -> Self {
        Transform {
            crop: Window {
                x0: 0.0,
                y0: 0.0,
                width: width as f64,
                height: height as f64,
            },
            hflip: false,
            vflip: false,
            brightness: 1.0,
            saturation: 1.0,
            hue: 1.0,
        }
    }

    /// Draws a transform for a `width x height` source.
    pub fn sample(rng: &mut Rng, toggles: AugmentToggles, width: usize, height: usize) -> Self {
        let mut t = Transform::identity(width, height);
        if toggles.crop {
            let (w, h) = (width as f64, height as f64);
            for _ in 0..CROP_ATTEMPTS {
                let area = rng.random_range(CROP_AREA.0..=CROP_AREA.1) * w * h;
                let aspect = rng.random_range(CROP_ASPECT.0..=CROP_ASPECT.1);
                let cw = (area * aspect).sqrt();
                let ch = (area / aspect).sqrt();
                if cw <= w && ch <= h {
                    t.crop = Window {
                        x0: rng.random_range(0.0..=w - cw),
                        y0: rng.random_range(0.0..=h - ch),
                        width: cw,
                        height: ch,
                    };
                    break;
                }
            }
        }
        if toggles.flip {
            t.hflip = rng.random_bool(0.5);
            t.vflip = rng.random_bool(0.5);
        }
        if toggles.color {
            t.brightness = rng.random_range(JITTER.0..=JITTER.1);
            t.saturation = rng.random_range(JITTER.0..=JITTER.1);
            t.hue = rng.random_range(JITTER.0..=JITTER.1);
        }
        t
    }

    fn axes(&self, src_w: usize, src_h: usize, out_w: usize, out_h: usize) -> (AxisMap, AxisMap) {
        let c = &self.crop;
        let mut xs = AxisMap::with_window(c.x0, c.width, src_w, out_w);
        let mut ys = AxisMap::with_window(c.y0, c.height, src_h, out_h);
        let flip = |m: &mut AxisMap| {
            m.lo.reverse();
            m.hi.reverse();
            m.frac.reverse();
        };
        if self.hflip {
            flip(&mut xs);
        }
        if self.vflip {
            flip(&mut ys);
        }
        (xs, ys)
    }

    /// Crop, resize and flip of a planar `[channels, src_h, src_w]` image.
    pub fn geometric(
        &self,
        img: &[f64],
        channels: usize,
        src_w: usize,
        src_h: usize,
        out_w: usize,
        out_h: usize,
    ) -> Vec<f64> {
        let (xs, ys) = self.axes(src_w, src_h, out_w, out_h);
        let (sp, op) = (src_w * src_h, out_w * out_h);
        let mut out = vec![0.0; channels * op];
        for c in 0..channels {
            resample_plane(&img[c * sp..(c + 1) * sp], src_w, &ys, &xs, &mut out[c * op..(c + 1) * op]);
        }
        out
    }

    /// Brightness, saturation and hue on a planar RGB image, then clipping.
    pub fn color(&self, img: &mut [f64]) {
        if (self.brightness, self.saturation, self.hue) == (1.0, 1.0, 1.0) {
            return;
        }
        let plane = img.len() / CHANNELS;
        let m = hue_matrix((self.hue - 1.0) * PI / 4.0);
        for p in 0..plane {
            let mut c = [img[p], img[plane + p], img[2 * plane + p]];
            c = c.map(|v| v * self.brightness);
            let gray = (c[0] + c[1] + c[2]) / 3.0;
            c = c.map(|v| gray + self.saturation * (v - gray));
            let r = [
                m[0][0] * c[0] + m[0][1] * c[1] + m[0][2] * c[2],
                m[1][0] * c[0] + m[1][1] * c[1] + m[1][2] * c[2],
                m[2][0] * c[0] + m[2][1] * c[1] + m[2][2] * c[2],
            ];
            for (ch, v) in r.iter().enumerate() {
                img[ch * plane + p] = v.clamp(0.0, 1.0);
            }
        }
    }

    /// The geometric part applied to a mask; samples at or above one half
    /// after interpolation are set.
    pub fn replay_mask(&self, mask: &BinaryMask, out_w: usize, out_h: usize) -> Result<BinaryMask> {
        let src: Vec<f64> = mask.values().iter().map(|&v| v as f64).collect();
        let out = self.geometric(&src, 1, mask.width(), mask.height(), out_w, out_h);
        BinaryMask::new(out_w, out_h, out.iter().map(|&v| u8::from(v >= 0.5)).collect())
    }
}

/// Rotation by `theta` about the unit gray axis `(1, 1, 1) / sqrt(3)`.
fn hue_matrix(theta: f64) -> [[f64; 3]; 3] {
    let (s, c) = theta.sin_cos();
    let k = 1.0 / 3f64.sqrt();
    let t = (1.0 - c) / 3.0;
    let d = c + t;
    let a = t - s * k;
    let b = t + s * k;
    [[d, a, b], [b, d, a], [a, b, d]]
}

/// One augmented view of `sample` at `out_w x out_h`, standardized, with the
/// transform that produced it.
pub fn augment(
    sample: &ImageSample,
    rng: &mut Rng,
    toggles: AugmentToggles,
    norm: &Normalization,
    out_w: usize,
    out_h: usize,
) -> (Vec<f64>, Transform) {
    let t = Transform::sample(rng, toggles, sample.width, sample.height);
    (apply(sample, &t, norm, out_w, out_h), t)
}

/// Replays `t` on `sample`.
pub fn apply(sample: &ImageSample, t: &Transform, norm: &Normalization, out_w: usize, out_h: usize) -> Vec<f64> {
    let src: Vec<f64> = sample.pixels.iter().map(|&v| v as f64 / 255.0).collect();
    let mut img = t.geometric(&src, CHANNELS, sample.width, sample.height, out_w, out_h);
    t.color(&mut img);
    norm.apply(&mut img, out_w * out_h);
    img
}

/// A stacked batch of augmented views and their transforms.
#[derive(Debug, Clone)]
pub struct AugmentedBatch<T> {
    pub images: Tensor<T>,
    pub transforms: Vec<Transform>,
}

impl<T: Real> AugmentedBatch<T> {
    pub fn build(
        samples: &[&ImageSample],
        rngs: &mut [Rng],
        toggles: AugmentToggles,
        norm: &Normalization,
        out_w: usize,
        out_h: usize,
    ) -> Result<Self> {
        if samples.is_empty() || samples.len() != rngs.len() {
            return Err(Error::invalid("augmented batch needs one generator per sample"));
        }
        let mut data = Vec::with_capacity(samples.len() * CHANNELS * out_w * out_h);
        let mut transforms = Vec::with_capacity(samples.len());
        for (s, rng) in samples.iter().zip(rngs.iter_mut()) {
            let (img, t) = augment(s, rng, toggles, norm, out_w, out_h);
            data.extend(img.into_iter().map(T::from_f64));
            transforms.push(t);
        }
        Ok(AugmentedBatch {
            images: Tensor::new(vec![samples.len(), CHANNELS, out_h, out_w], data)?,
            transforms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::synthdata::{gen_labeled, input_batch};

    #[test]
    fn toggles_off_is_resize_and_normalize() {
        let s = gen_labeled(1, 1, 8, 32, 32).unwrap().remove(0);
        let norm = Normalization {
            mean: [0.4, 0.5, 0.6],
            std: [0.2, 0.25, 0.3],
        };
        let (img, t) = augment(&s, &mut stream(0, "aug", 0), AugmentToggles::OFF, &norm, 32, 32);
        assert_eq!(t, Transform::identity(32, 32));
        let want = input_batch::<f64>(&[&s], Some(&norm), 32, 32).unwrap();
        assert_eq!(img, want.data());
        let (img, _) = augment(&s, &mut stream(0, "aug", 0), AugmentToggles::OFF, &norm, 16, 16);
        assert_eq!(img, input_batch::<f64>(&[&s], Some(&norm), 16, 16).unwrap().data());
    }

    #[test]
    fn double_flip_is_identity() {
        let s = gen_labeled(2, 1, 8, 16, 16).unwrap().remove(0);
        let src: Vec<f64> = s.pixels.iter().map(|&v| v as f64 / 255.0).collect();
        let mut t = Transform::identity(16, 16);
        t.hflip = true;
        t.vflip = true;
        let once = t.geometric(&src, 3, 16, 16, 16, 16);
        let twice = t.geometric(&once, 3, 16, 16, 16, 16);
        assert_eq!(twice, src);
        assert_ne!(once, src);
    }

    #[test]
    fn neutral_color_is_identity_and_clipping_holds() {
        let mut t = Transform::identity(4, 4);
        let img: Vec<f64> = (0..48).map(|i| i as f64 / 47.0).collect();
        let mut out = img.clone();
        t.color(&mut out);
        for (a, b) in out.iter().zip(&img) {
            assert!((a - b).abs() < 1e-12);
        }
        t.brightness = 1.4;
        t.hue = 0.6;
        t.saturation = 1.4;
        t.color(&mut out);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn hue_rotation_preserves_gray() {
        let m = hue_matrix(0.3);
        for row in m {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn crop_respects_area_and_aspect() {
        let mut rng = stream(3, "crop", 0);
        for _ in 0..500 {
            let t = Transform::sample(&mut rng, AugmentToggles::default(), 64, 64);
            let c = t.crop;
            let area = c.width * c.height / 4096.0;
            let aspect = c.width / c.height;
            assert!((0.6 - 1e-9..=1.0 + 1e-9).contains(&area) || (c.width, c.height) == (64.0, 64.0));
            assert!((0.75 - 1e-9..=4.0 / 3.0 + 1e-9).contains(&aspect));
            assert!(c.x0 >= 0.0 && c.x0 + c.width <= 64.0 + 1e-9);
            assert!(c.y0 >= 0.0 && c.y0 + c.height <= 64.0 + 1e-9);
            for v in [t.brightness, t.saturation, t.hue] {
                assert!((0.6..=1.4).contains(&v));
            }
        }
    }

    #[test]
    fn mask_replay_matches_image_path() {
        let samples = gen_labeled(4, 6, 8, 32, 32).unwrap();
        let mut rng = stream(4, "replay", 0);
        for s in &samples {
            let m = s.gt_mask.as_ref().unwrap();
            let t = Transform::sample(&mut rng, AugmentToggles::default(), 32, 32);
            let planes: Vec<f64> = (0..3).flat_map(|_| m.values().iter().map(|&v| v as f64)).collect();
            let warped = t.geometric(&planes, 3, 32, 32, 32, 32);
            let replayed = t.replay_mask(m, 32, 32).unwrap();
            for c in 0..3 {
                let bits: Vec<u8> = warped[c * 1024..(c + 1) * 1024].iter().map(|&v| u8::from(v >= 0.5)).collect();
                assert_eq!(bits, replayed.values());
            }
        }
    }
}
