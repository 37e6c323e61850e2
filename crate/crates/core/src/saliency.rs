//! Supervision masks from BC-model input gradients.
//!
//! The pipeline per image is: backpropagate the BC logit to the input and
//! reduce channels to a non-negative [`GradientMap`], binarize it at
//! `delta * max(G)`, then keep the largest 4-connected component.

use serde::{Deserialize, Serialize};

use crate::components;
use crate::error::{Error, Result};
use crate::evalkit::BBox;
use crate::nets::{BcNet, Bindings};
use crate::tensor::{Graph, Real, Tensor};

/// How a `[C, H, W]` input gradient becomes an `[H, W]` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelReduction {
    #[default]
    MaxAbs,
    MeanAbs,
}

/// Conditions that produce a defined but degenerate result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskWarning {
    /// The gradient map was identically zero; the mask is all ones.
    ZeroGradient,
    /// No pixel survived; the mask is empty.
    EmptyMask,
}

/// Per-pixel magnitude of the BC logit's input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GradientMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape {
                op: "gradient_map",
                lhs: vec![height, width],
                rhs: vec![values.len()],
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("gradient map value {bad} is not a finite non-negative number")));
        }
        Ok(GradientMap { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Min-max scaled to `0..=255`; a constant map renders black.
    pub fn to_gray8(&self) -> Vec<u8> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.max();
        if hi <= lo {
            return vec![0; self.values.len()];
        }
        self.values
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
            .collect()
    }

    /// Mean over a `(2r+1)^2` window clipped at the borders.
    pub fn box_blur(&self, radius: usize) -> GradientMap {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let mut out = Vec::with_capacity(self.values.len());
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
            for x in 0..w {
                let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
                let mut s = 0.0;
                for yy in y0..=y1 {
                    s += self.values[yy * w + x0..=yy * w + x1].iter().sum::<f64>();
                }
                out.push(s / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64);
            }
        }
        GradientMap {
            width: w,
            height: h,
            values: out,
        }
    }
}

/// A `{0, 1}` mask over an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    values: Vec<u8>,
    component_selected: bool,
    warning: Option<MaskWarning>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape {
                op: "binary_mask",
                lhs: vec![height, width],
                rhs: vec![values.len()],
            });
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::invalid("binary mask values must be 0 or 1"));
        }
        Ok(BinaryMask {
            width,
            height,
            values,
            component_selected: false,
            warning: None,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count_ones() == 0
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    /// Pixels as `0` or `255`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values.iter().map(|&v| v * 255).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn component_selected(&self) -> bool {
        self.component_selected
    }

    pub fn warning(&self) -> Option<MaskWarning> {
        self.warning
    }

    /// Tight inclusive-exclusive box around the set pixels.
    pub fn tight_box(&self) -> Option<BBox> {
        BBox::around(&self.values, self.width, self.height)
    }
}

/// Backpropagates the BC logit of every image in `batch` (`[N, C, H, W]`) to
/// the input and reduces each `[C, H, W]` gradient to an `[H, W]` map.
/// Network parameters are read, never written.
pub fn gradient_maps<T: Real>(
    net: &BcNet<T>,
    batch: &Tensor<T>,
    reduction: ChannelReduction,
) -> Result<Vec<GradientMap>> {
    let mut g = Graph::new();
    let x = g.variable(batch.clone());
    let logits = net.forward(&mut g, x, &mut Bindings::default())?;
    // Images are independent, so d(sum of logits)/d(image i) = d(logit i)/d(image i).
    let root = g.sum(logits)?;
    g.backward(root)?;
    let grad = g.grad(x).expect("input requires grad");
    let s = batch.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let plane = h * w;
    grad.chunks_exact(c * plane)
        .map(|img| {
            let mut values = vec![0.0f64; plane];
            for ch in img.chunks_exact(plane) {
                for (v, &gv) in values.iter_mut().zip(ch) {
                    let a = gv.to_f64().abs();
                    match reduction {
                        ChannelReduction::MaxAbs => *v = v.max(a),
                        ChannelReduction::MeanAbs => *v += a,
                    }
                }
            }
            if reduction == ChannelReduction::MeanAbs {
                values.iter_mut().for_each(|v| *v /= c as f64);
            }
            GradientMap::new(w, h, values)
        })
        .collect()
}

/// Gradient map of a single `[C, H, W]` image.
pub fn gradient_map<T: Real>(net: &BcNet<T>, image: &Tensor<T>, reduction: ChannelReduction) -> Result<GradientMap> {
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    let batch = image.clone().reshape(shape)?;
    Ok(gradient_maps(net, &batch, reduction)?.remove(0))
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold must lie in (0, 1], got {delta}")))
    }
}

/// `M = 1` where `G >= delta * max(G)`. An all-zero map yields an all-ones
/// mask flagged with [`MaskWarning::ZeroGradient`].
pub fn threshold_mask(map: &GradientMap, delta: f64) -> Result<BinaryMask> {
    check_delta(delta)?;
    let max = map.max();
    let mut mask = if max == 0.0 {
        let mut m = BinaryMask::new(map.width, map.height, vec![1; map.values.len()])?;
        m.warning = Some(MaskWarning::ZeroGradient);
        m
    } else {
        let cut = delta * max;
        let values = map.values.iter().map(|&v| u8::from(v >= cut)).collect();
        BinaryMask::new(map.width, map.height, values)?
    };
    mask.component_selected = false;
    Ok(mask)
}

/// Keeps only the largest 4-connected component of set pixels.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    match components::keep_largest(&mask.values, mask.width, mask.height) {
        Some(values) => BinaryMask {
            values,
            component_selected: true,
            ..mask.clone()
        },
        None => BinaryMask {
            component_selected: true,
            warning: Some(MaskWarning::EmptyMask),
            ..mask.clone()
        },
    }
}

/// Mask-construction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSettings {
    pub delta: f64,
    pub reduction: ChannelReduction,
    /// Box-blur radius applied to the gradient map; 0 disables smoothing.
    pub blur_radius: usize,
}

impl Default for MaskSettings {
    fn default() -> Self {
        MaskSettings {
            delta: 0.8,
            reduction: ChannelReduction::MaxAbs,
            blur_radius: 0,
        }
    }
}

/// Threshold and component selection for an already-computed map.
pub fn mask_from_map(map: &GradientMap, settings: &MaskSettings) -> Result<BinaryMask> {
    let map = map.box_blur(settings.blur_radius);
    Ok(largest_component(&threshold_mask(&map, settings.delta)?))
}

/// Gradient map, threshold and largest component for every image in the
/// batch. The masks are plain data with no link back to the BC model.
pub fn mask_for_batch<T: Real>(net: &BcNet<T>, batch: &Tensor<T>, settings: &MaskSettings) -> Result<Vec<BinaryMask>> {
    check_delta(settings.delta)?;
    gradient_maps(net, batch, settings.reduction)?
        .iter()
        .map(|m| mask_from_map(m, settings))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Backbone, Linear};
    use crate::rng::stream;
    use rand::Rng as _;

    fn map(w: usize, h: usize, v: &[f64]) -> GradientMap {
        GradientMap::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn threshold_hand_case() {
        let m = threshold_mask(&map(2, 2, &[0.2, 1.0, 0.79, 0.8]), 0.8).unwrap();
        assert_eq!(m.values(), &[0, 1, 0, 1]);
    }

    #[test]
    fn tiny_delta_keeps_all_positive_pixels() {
        let m = threshold_mask(&map(2, 2, &[0.2, 1.0, 0.01, 0.8]), 1e-9).unwrap();
        assert_eq!(m.values(), &[1, 1, 1, 1]);
    }

    #[test]
    fn zero_map_gives_all_ones_with_warning() {
        let m = threshold_mask(&map(2, 1, &[0.0, 0.0]), 0.5).unwrap();
        assert_eq!(m.values(), &[1, 1]);
        assert_eq!(m.warning(), Some(MaskWarning::ZeroGradient));
    }

    #[test]
    fn delta_must_be_in_half_open_unit_interval() {
        let g = map(1, 1, &[1.0]);
        assert!(threshold_mask(&g, 0.0).is_err());
        assert!(threshold_mask(&g, 1.5).is_err());
        assert!(threshold_mask(&g, 1.0).is_ok());
    }

    #[test]
    fn empty_mask_stays_empty_with_warning() {
        let m = largest_component(&BinaryMask::new(3, 1, vec![0, 0, 0]).unwrap());
        assert!(m.is_empty());
        assert!(m.component_selected());
        assert_eq!(m.warning(), Some(MaskWarning::EmptyMask));
    }

    #[test]
    fn single_component_is_unchanged() {
        let m = BinaryMask::new(3, 2, vec![0, 1, 1, 0, 1, 0]).unwrap();
        assert_eq!(largest_component(&m).values(), m.values());
    }

    #[test]
    fn box_blur_preserves_constants() {
        let g = map(3, 3, &[2.0; 9]).box_blur(1);
        assert!(g.values().iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    fn bc() -> BcNet<f64> {
        BcNet::new(Backbone::new(&mut stream(4, "init", 0)), &mut stream(4, "init", 1))
    }

    fn image(seed: u64) -> Tensor<f64> {
        let mut r = stream(seed, "img", 0);
        Tensor::new(vec![3, 8, 8], (0..192).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn gradient_map_is_non_negative_and_leaves_net_untouched() {
        let net = bc();
        let before = net.clone();
        let g = gradient_map(&net, &image(1), ChannelReduction::MaxAbs).unwrap();
        assert_eq!((g.width(), g.height()), (8, 8));
        assert!(g.values().iter().all(|&v| v >= 0.0));
        assert_eq!(net, before);
    }

    #[test]
    fn linear_head_on_constant_features() {
        // With a zero backbone the logit is the head bias and G vanishes.
        let mut net = bc();
        for c in &mut net.backbone.convs {
            c.weight.data_mut().fill(0.0);
        }
        net.fc = Linear::zeros(64, 1);
        let g = gradient_map(&net, &image(2), ChannelReduction::MaxAbs).unwrap();
        assert_eq!(g.max(), 0.0);
    }

    #[test]
    fn batch_equals_single_image_pipeline() {
        let net = bc();
        let (a, b) = (image(3), image(4));
        let mut data = a.data().to_vec();
        data.extend_from_slice(b.data());
        let batch = Tensor::new(vec![2, 3, 8, 8], data).unwrap();
        let settings = MaskSettings::default();
        let masks = mask_for_batch(&net, &batch, &settings).unwrap();
        assert_eq!(masks.len(), 2);
        let single = mask_from_map(&gradient_map(&net, &b, settings.reduction).unwrap(), &settings).unwrap();
        assert_eq!(masks[1], single);
    }
}
