use serde::{Deserialize, Serialize};

use super::{
    bcstar_error, box_from_cam, cam_for_class, localization_error, mask_validity, IouRule, LocalizationRecord,
};
use crate::error::{Error, Result};
use crate::nets::{BcNet, Bindings, CtNet};
use crate::saliency::{mask_for_batch, BinaryMask, MaskSettings};
use crate::synthdata::{input_batch, ImageSample, Normalization};
use crate::tensor::{Graph, Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// CAM binarization threshold, relative to the map maximum.
    pub tau: f64,
    pub rule: IouRule,
    /// Mask settings for the BC* metric.
    pub mask: MaskSettings,
    pub batch_size: usize,
    /// Recorded in the metrics for provenance.
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            tau: 0.8,
            rule: IouRule::Strict,
            mask: MaskSettings::default(),
            batch_size: 50,
            seed: 0,
        }
    }
}

/// Classifier output for one image, kept so several thresholds can be
/// evaluated without rerunning the network.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub image_id: String,
    pub label: usize,
    pub gt_box: super::BBox,
    pub height: usize,
    pub width: usize,
    /// Up to five classes by descending logit, ties to the lower id.
    pub top5: Vec<usize>,
    pub logits: Vec<f64>,
    /// `[n_classes, h, w]`.
    pub score_map: Tensor<f64>,
}

fn top_k(logits: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn labeled(samples: &[ImageSample]) -> Result<Vec<&ImageSample>> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation over an empty split"));
    }
    samples
        .iter()
        .map(|s| match (s.label, s.gt_box) {
            (Some(_), Some(_)) => Ok(s),
            _ => Err(Error::Dataset(format!("{}: evaluation needs a label and a box", s.id))),
        })
        .collect()
}

/// Runs `net` over `samples` with evaluation preprocessing.
pub fn predict<T: Real>(
    net: &CtNet<T>,
    samples: &[ImageSample],
    norm: &Normalization,
    batch_size: usize,
) -> Result<Vec<Prediction>> {
    let samples = labeled(samples)?;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let (h, w) = (chunk[0].height, chunk[0].width);
        let x = input_batch::<T>(chunk, Some(norm), h, w)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let o = net.forward(&mut g, xv, false, &mut Bindings::default())?;
        let logits = g.value(o.logits).cast::<f64>();
        let maps = g.value(o.score_map).cast::<f64>();
        let n = net.n_classes();
        let ms = maps.shape()[1..].to_vec();
        for (i, s) in chunk.iter().enumerate() {
            let l = logits.outer(i).to_vec();
            out.push(Prediction {
                image_id: s.id.clone(),
                label: s.label.unwrap(),
                gt_box: s.gt_box.unwrap(),
                height: s.height,
                width: s.width,
                top5: top_k(&l, 5.min(n)),
                logits: l,
                score_map: Tensor::new(ms.clone(), maps.outer(i).to_vec())?,
            });
        }
    }
    Ok(out)
}

/// Localization records at threshold `tau`: one box per top-5 class, each
/// from that class's own CAM.
pub fn records_at(preds: &[Prediction], tau: f64, rule: IouRule) -> Result<Vec<LocalizationRecord>> {
    preds
        .iter()
        .map(|p| {
            let boxes = p
                .top5
                .iter()
                .map(|&c| Ok(box_from_cam(&cam_for_class(&p.score_map, c, p.height, p.width)?, tau)?.0))
                .collect::<Result<Vec<_>>>()?;
            Ok(LocalizationRecord::new(
                p.image_id.clone(),
                p.label,
                p.top5.clone(),
                boxes,
                p.gt_box,
                rule,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub top1_err: f64,
    pub top5_err: f64,
    /// Absent when no BC model was supplied.
    pub bcstar_err: Option<f64>,
    pub n: usize,
    pub tau: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub records: Vec<LocalizationRecord>,
    /// BC mask validity per image, in record order.
    pub mask_valid: Vec<bool>,
    pub predictions: Vec<Prediction>,
}

/// BC masks for `samples` under evaluation preprocessing.
pub fn bc_masks<T: Real>(
    bc: &BcNet<T>,
    samples: &[&ImageSample],
    norm: &Normalization,
    settings: &MaskSettings,
    batch_size: usize,
) -> Result<Vec<BinaryMask>> {
    let mut masks = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let (h, w) = (chunk[0].height, chunk[0].width);
        let x = input_batch::<T>(chunk, Some(norm), h, w)?;
        masks.extend(mask_for_batch(bc, &x, settings)?);
    }
    Ok(masks)
}

/// Top-1/top-5 localization error of `ct` and, when `bc` is given, the BC*
/// error of its masks.
pub fn evaluate<T: Real>(
    ct: &CtNet<T>,
    bc: Option<&BcNet<T>>,
    samples: &[ImageSample],
    norm: &Normalization,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let predictions = predict(ct, samples, norm, settings.batch_size)?;
    let records = records_at(&predictions, settings.tau, settings.rule)?;
    let mask_valid = match bc {
        Some(bc) => {
            let refs = labeled(samples)?;
            let masks = bc_masks(bc, &refs, norm, &settings.mask, settings.batch_size)?;
            masks
                .iter()
                .zip(&refs)
                .map(|(m, s)| mask_validity(m, &s.gt_box.unwrap()))
                .collect()
        }
        None => Vec::new(),
    };
    let metrics = Metrics {
        top1_err: localization_error(&records, 1, settings.rule)?,
        top5_err: localization_error(&records, 5, settings.rule)?,
        bcstar_err: if bc.is_some() { Some(bcstar_error(&mask_valid)?) } else { None },
        n: records.len(),
        tau: settings.tau,
        seed: settings.seed,
    };
    Ok(EvalReport {
        metrics,
        records,
        mask_valid,
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub top1_err: f64,
    pub top5_err: f64,
}

/// Localization error at each CAM threshold in `deltas`.
pub fn sweep_threshold(preds: &[Prediction], deltas: &[f64], rule: IouRule) -> Result<Vec<SweepRow>> {
    if deltas.is_empty() {
        return Err(Error::invalid("sweep needs at least one threshold"));
    }
    deltas
        .iter()
        .map(|&delta| {
            let records = records_at(preds, delta, rule)?;
            Ok(SweepRow {
                delta,
                top1_err: localization_error(&records, 1, rule)?,
                top5_err: localization_error(&records, 5, rule)?,
            })
        })
        .collect()
}

pub fn sweep_table_text(rows: &[SweepRow]) -> String {
    let mut s = format!("{:>8} {:>10} {:>10}\n", "delta", "top1_err", "top5_err");
    for r in rows {
        s.push_str(&format!("{:>8.2} {:>10.2} {:>10.2}\n", r.delta, r.top1_err, r.top5_err));
    }
    s
}
