use std::path::Path;

use serde::{Deserialize, Serialize};

use super::augment::AugmentToggles;
use crate::error::{Error, Result};
use crate::evalkit::IouRule;
use crate::saliency::{ChannelReduction, MaskSettings};

/// Reference schedule of the original large-scale setup: 100 epochs,
/// backbone lr 1e-4, head lr 1e-3, divided by 10 every 20 epochs.
pub const PAPER_EPOCHS: usize = 100;
pub const PAPER_LR_BACKBONE: f64 = 1e-4;
pub const PAPER_LR_HEAD: f64 = 1e-3;
pub const PAPER_LR_DECAY: f64 = 0.1;
pub const PAPER_LR_PERIOD: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("precision must be f32 or f64, got {s:?}"))),
        }
    }
}

/// Every knob of the three training stages and of evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub pretrain_epochs: usize,
    /// Learning rate of every pretraining parameter.
    pub pretrain_lr: f64,
    /// Pretraining epochs between learning-rate decays.
    pub pretrain_lr_period: usize,
    /// Apply `augment` during pretraining as well.
    pub pretrain_augment: bool,
    pub bc_epochs: usize,
    /// Joint training epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub lr_period: usize,
    pub momentum: f64,
    /// Mask threshold relative to the gradient-map maximum.
    pub delta: f64,
    /// CAM threshold at evaluation; `delta` when absent.
    pub tau: Option<f64>,
    pub lambda_mask: f64,
    pub full_bce: bool,
    /// Divide the mask loss by the pixel count.
    pub mask_mean: bool,
    pub augment: AugmentToggles,
    /// Compute masks on the augmented view instead of the clean image.
    pub masks_on_augmented: bool,
    pub reduction: ChannelReduction,
    pub blur_radius: usize,
    pub precision: Precision,
    pub threads: usize,
    /// Accept IoU == 0.5 as a hit.
    pub iou_geq: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            pretrain_epochs: 12,
            pretrain_lr: 0.015,
            pretrain_lr_period: 10,
            pretrain_augment: false,
            bc_epochs: 20,
            epochs: 12,
            batch_size: 8,
            lr_backbone: 0.0025,
            lr_head: 0.01,
            lr_decay: 0.1,
            lr_period: 8,
            momentum: 0.9,
            delta: 0.8,
            tau: None,
            lambda_mask: 1.0,
            full_bce: false,
            mask_mean: false,
            augment: AugmentToggles::default(),
            masks_on_augmented: false,
            reduction: ChannelReduction::MaxAbs,
            blur_radius: 0,
            precision: Precision::F32,
            threads: 1,
            iou_geq: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr_backbone > 0.0 && self.lr_head > 0.0 && self.pretrain_lr > 0.0) {
            return bad("learning rates must be > 0".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.pretrain_epochs == 0 || self.bc_epochs == 0 || self.epochs == 0 || self.lr_period == 0 || self.pretrain_lr_period == 0 {
            return bad("epoch counts and lr_period must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        for (name, v) in [("delta", Some(self.delta)), ("tau", self.tau)] {
            if let Some(v) = v {
                if !(v > 0.0 && v <= 1.0) {
                    return bad(format!("{name} must lie in (0, 1], got {v}"));
                }
            }
        }
        if !(self.lambda_mask >= 0.0 && self.lambda_mask.is_finite()) {
            return bad(format!("lambda_mask must be >= 0, got {}", self.lambda_mask));
        }
        if self.threads != 1 {
            return bad(format!("only single-threaded mode is available, got threads = {}", self.threads));
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(self.delta)
    }

    pub fn iou_rule(&self) -> IouRule {
        if self.iou_geq {
            IouRule::AtLeast
        } else {
            IouRule::Strict
        }
    }

    pub fn mask_settings(&self) -> MaskSettings {
        MaskSettings {
            delta: self.delta,
            reduction: self.reduction,
            blur_radius: self.blur_radius,
        }
    }

    /// Parses a JSON document; missing keys take their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: TrainConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                Error::Config(inner.to_string())
            } else {
                Error::Config(format!("{path}: {inner}"))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(TrainConfig::from_json("{}").unwrap(), TrainConfig::default());
    }

    #[test]
    fn single_key_overrides() {
        let c = TrainConfig::from_json(r#"{"delta":0.75}"#).unwrap();
        assert_eq!(c.delta, 0.75);
        assert_eq!(c.tau(), 0.75);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = TrainConfig::from_json(r#"{"detla":0.8}"#).unwrap_err().to_string();
        assert!(e.contains("detla"), "{e}");
    }

    #[test]
    fn type_mismatch_names_key_and_type() {
        let e = TrainConfig::from_json(r#"{"epochs":"many"}"#).unwrap_err().to_string();
        assert!(e.contains("epochs"), "{e}");
        assert!(e.contains("expected usize"), "{e}");
        let e = TrainConfig::from_json(r#"{"augment":{"flip":1}}"#).unwrap_err().to_string();
        assert!(e.contains("augment"), "{e}");
    }

    #[test]
    fn round_trip() {
        let c = TrainConfig {
            tau: Some(0.7),
            full_bce: true,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn invalid_values_rejected() {
        for bad in [r#"{"lr_head":0}"#, r#"{"lr_decay":1.5}"#, r#"{"epochs":0}"#, r#"{"delta":0}"#, r#"{"threads":4}"#] {
            assert!(TrainConfig::from_json(bad).is_err(), "{bad}");
        }
    }
}
