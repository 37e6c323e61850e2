//! Localization evaluation: CAM to box, IoU, top-k localization error, the
//! BC* mask-validity rate and the threshold sweep.

mod boxes;
pub mod render;
mod run;

pub use boxes::{iou, BBox};
pub use run::{
    bc_masks, evaluate, predict, records_at, sweep_table_text, sweep_threshold, EvalReport, EvalSettings, Metrics,
    Prediction, SweepRow,
};

use serde::{Deserialize, Serialize};

use crate::components;
use crate::error::{Error, Result};
use crate::saliency::BinaryMask;
use crate::tensor::kernels::{resample_plane, AxisMap};
use crate::tensor::{Real, Tensor};

/// Overlap required for a box to count as a correct localization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouRule {
    /// IoU strictly greater than 0.5.
    #[default]
    Strict,
    /// IoU of at least 0.5.
    AtLeast,
}

impl IouRule {
    pub fn accepts(self, iou: f64) -> bool {
        match self {
            IouRule::Strict => iou > 0.5,
            IouRule::AtLeast => iou >= 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapWarning {
    /// The map was constant, so min-max normalization produced zeros.
    ConstantMap,
    /// Nothing survived thresholding; the full-image box was returned.
    EmptyMap,
}

/// A class activation map at image resolution, min-max normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Cam {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub warning: Option<MapWarning>,
}

/// Channel `class` of a `[n, h, w]` score map, bilinearly upsampled to
/// `height x width` and normalized to `[0, 1]`.
pub fn cam_for_class<T: Real>(score_map: &Tensor<T>, class: usize, height: usize, width: usize) -> Result<Cam> {
    let s = score_map.shape();
    if s.len() != 3 {
        return Err(Error::Shape {
            op: "cam_for_class",
            lhs: s.to_vec(),
            rhs: vec![3],
        });
    }
    if class >= s[0] {
        return Err(Error::invalid(format!("class {class} out of range for {} channels", s[0])));
    }
    if height < s[1] || width < s[2] {
        return Err(Error::invalid("cam_for_class: target smaller than score map"));
    }
    let plane = &score_map.outer(class)[..s[1] * s[2]];
    let mut up = vec![T::zero(); height * width];
    resample_plane(plane, s[2], &AxisMap::new(s[1], height), &AxisMap::new(s[2], width), &mut up);
    let raw: Vec<f64> = up.iter().map(|v| v.to_f64()).collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (values, warning) = if hi > lo {
        (raw.iter().map(|v| (v - lo) / (hi - lo)).collect(), None)
    } else {
        (vec![0.0; raw.len()], Some(MapWarning::ConstantMap))
    };
    Ok(Cam {
        width,
        height,
        values,
        warning,
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold must lie in (0, 1], got {tau}")))
    }
}

/// Binarizes `map` at `tau * max(map)`, keeps the largest 4-connected
/// component and returns its tight box. An all-zero map yields the full
/// image box and [`MapWarning::EmptyMap`].
pub fn box_from_map(map: &[f64], width: usize, height: usize, tau: f64) -> Result<(BBox, Option<MapWarning>)> {
    check_tau(tau)?;
    if map.len() != width * height {
        return Err(Error::Shape {
            op: "box_from_map",
            lhs: vec![height, width],
            rhs: vec![map.len()],
        });
    }
    let max = map.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok((BBox::full(width, height), Some(MapWarning::EmptyMap)));
    }
    let cut = tau * max;
    let bin: Vec<u8> = map.iter().map(|&v| u8::from(v >= cut)).collect();
    let kept = components::keep_largest(&bin, width, height).expect("max pixel always survives");
    Ok((BBox::around(&kept, width, height).expect("non-empty component"), None))
}

pub fn box_from_cam(cam: &Cam, tau: f64) -> Result<(BBox, Option<MapWarning>)> {
    box_from_map(&cam.values, cam.width, cam.height, tau)
}

pub fn box_from_mask(mask: &BinaryMask, tau: f64) -> Result<(BBox, Option<MapWarning>)> {
    let values: Vec<f64> = mask.values().iter().map(|&v| v as f64).collect();
    box_from_map(&values, mask.width(), mask.height(), tau)
}

/// Evaluation outcome for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub image_id: String,
    pub label: usize,
    /// Up to five class ids in descending score order.
    pub top5: Vec<usize>,
    /// Predicted box for each entry of `top5`, from that class's own CAM.
    pub boxes: Vec<BBox>,
    /// IoU of each predicted box against `gt_box`.
    pub ious: Vec<f64>,
    pub gt_box: BBox,
    pub top1_correct: bool,
    pub top5_correct: bool,
}

impl LocalizationRecord {
    pub fn new(
        image_id: String,
        label: usize,
        top5: Vec<usize>,
        boxes: Vec<BBox>,
        gt_box: BBox,
        rule: IouRule,
    ) -> Self {
        let ious: Vec<f64> = boxes.iter().map(|b| iou(b, &gt_box)).collect();
        let mut rec = LocalizationRecord {
            image_id,
            label,
            top5,
            boxes,
            ious,
            gt_box,
            top1_correct: false,
            top5_correct: false,
        };
        rec.top1_correct = rec.correct_at(1, rule);
        rec.top5_correct = rec.correct_at(5, rule);
        rec
    }

    /// Some rank `i < k` predicts the true label with an accepted box.
    pub fn correct_at(&self, k: usize, rule: IouRule) -> bool {
        self.top5
            .iter()
            .zip(&self.ious)
            .take(k)
            .any(|(&c, &o)| c == self.label && rule.accepts(o))
    }
}

/// Percentage of records not correctly localized at rank `k`.
pub fn localization_error(records: &[LocalizationRecord], k: usize, rule: IouRule) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("localization error over an empty split"));
    }
    let correct = records.iter().filter(|r| r.correct_at(k, rule)).count();
    Ok(100.0 * (1.0 - correct as f64 / records.len() as f64))
}

/// A mask is valid when its tight box overlaps the ground truth with
/// IoU > 0.5 or fully covers it. Empty masks are invalid.
pub fn mask_validity(mask: &BinaryMask, gt_box: &BBox) -> bool {
    match mask.tight_box() {
        Some(b) => iou(&b, gt_box) > 0.5 || b.contains(gt_box),
        None => false,
    }
}

/// Percentage of invalid masks.
pub fn bcstar_error(valid: &[bool]) -> Result<f64> {
    if valid.is_empty() {
        return Err(Error::invalid("BC* error over an empty split"));
    }
    let ok = valid.iter().filter(|&&v| v).count();
    Ok(100.0 * (1.0 - ok as f64 / valid.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: usize, y0: usize, x1: usize, y1: usize) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn rec(label: usize, top5: &[usize], boxes: Vec<BBox>, gt: BBox) -> LocalizationRecord {
        LocalizationRecord::new("x".into(), label, top5.to_vec(), boxes, gt, IouRule::Strict)
    }

    #[test]
    fn single_pixel_map_box() {
        let mut m = vec![0.0; 64];
        m[3 * 8 + 5] = 0.7;
        assert_eq!(box_from_map(&m, 8, 8, 0.5).unwrap().0, b(5, 3, 6, 4));
    }

    #[test]
    fn zero_map_falls_back_to_full_image() {
        let (bx, w) = box_from_map(&[0.0; 12], 4, 3, 0.5).unwrap();
        assert_eq!(bx, BBox::full(4, 3));
        assert_eq!(w, Some(MapWarning::EmptyMap));
        assert!(box_from_map(&[0.0; 12], 4, 3, 0.0).is_err());
    }

    #[test]
    fn constant_cam_normalizes_to_zero() {
        let s = Tensor::<f32>::full(vec![2, 4, 4], 3.0);
        let cam = cam_for_class(&s, 1, 16, 16).unwrap();
        assert!(cam.values.iter().all(|&v| v == 0.0));
        assert_eq!(cam.warning, Some(MapWarning::ConstantMap));
        assert!(cam_for_class(&s, 2, 16, 16).is_err());
    }

    #[test]
    fn cam_range_is_unit_interval() {
        let data: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        let s = Tensor::new(vec![1, 4, 4], data).unwrap();
        let cam = cam_for_class(&s, 0, 16, 16).unwrap();
        let hi = cam.values.iter().copied().fold(f64::MIN, f64::max);
        let lo = cam.values.iter().copied().fold(f64::MAX, f64::min);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn strict_half_overlap_is_incorrect() {
        let gt = b(0, 0, 10, 10);
        let good = rec(1, &[1, 0], vec![b(0, 0, 9, 10), b(0, 0, 1, 1)], gt);
        // 50 / 100 exactly
        let half = rec(1, &[1, 0], vec![b(0, 0, 5, 10), b(0, 0, 1, 1)], gt);
        assert_eq!(half.ious[0], 0.5);
        assert_eq!(localization_error(&[good.clone(), half.clone()], 1, IouRule::Strict).unwrap(), 50.0);
        assert_eq!(localization_error(&[good, half], 1, IouRule::AtLeast).unwrap(), 0.0);
        assert!(localization_error(&[], 1, IouRule::Strict).is_err());
    }

    #[test]
    fn top5_counts_later_ranks() {
        let gt = b(0, 0, 10, 10);
        let r = rec(2, &[0, 2], vec![gt, gt], gt);
        assert!(!r.top1_correct);
        assert!(r.top5_correct);
    }

    #[test]
    fn validity_cases() {
        let gt = b(10, 10, 20, 20);
        let exact = BinaryMask::new(32, 32, (0..1024).map(|i| u8::from(gt.contains(&b(i % 32, i / 32, i % 32 + 1, i / 32 + 1)))).collect()).unwrap();
        assert!(mask_validity(&exact, &gt));
        let full = BinaryMask::new(32, 32, vec![1; 1024]).unwrap();
        assert!(mask_validity(&full, &gt));
        let empty = BinaryMask::new(32, 32, vec![0; 1024]).unwrap();
        assert!(!mask_validity(&empty, &gt));
        assert_eq!(bcstar_error(&[true, false, true, true]).unwrap(), 25.0);
    }
}
