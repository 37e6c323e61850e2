use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::augment::{AugmentToggles, AugmentedBatch};
use super::sgd::{collect_grads, Sgd};
use super::{lr_at, EpochLog, TrainConfig};
use crate::error::{Error, Result};
use crate::evalkit::bc_masks;
use crate::nets::loss::{bce_node, cls_node, mask_node};
use crate::nets::{total_loss, Backbone, BcNet, Bindings, CtNet, PretrainNet};
use crate::rng::{derive_seed, stream, Rng};
use crate::saliency::{mask_for_batch, BinaryMask};
use crate::synthdata::{gen_background, input_batch, ImageSample, Normalization};
use crate::tensor::{Graph, Real, Tensor};

fn epoch_order(seed: u64, tag: &str, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, tag, epoch as u64));
    idx
}

fn sample_rngs(seed: u64, tag: &str, epoch: usize, positions: std::ops::Range<usize>) -> Vec<Rng> {
    positions
        .map(|p| stream(seed, tag, ((epoch as u64) << 32) | p as u64))
        .collect()
}

fn labels_of(samples: &[&ImageSample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::Dataset(format!("{}: training needs labeled images", s.id)))
        })
        .collect()
}

fn elapsed_ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

/// Fraction of `pred` equal to `truth`.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome<T> {
    pub backbone: Backbone<T>,
    /// Loss of the very first batch, before any update.
    pub initial_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub log: Vec<EpochLog>,
}

fn classify<T: Real>(net: &PretrainNet<T>, samples: &[ImageSample], norm: &Normalization, batch: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    let refs: Vec<&ImageSample> = samples.iter().collect();
    for chunk in refs.chunks(batch.max(1)) {
        let x = input_batch::<T>(chunk, Some(norm), chunk[0].height, chunk[0].width)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let z = net.forward(&mut g, xv, &mut Bindings::default())?;
        let z = g.value(z).cast::<f64>();
        out.extend((0..chunk.len()).map(|i| argmax(z.outer(i))));
    }
    Ok(out)
}

/// Trains the backbone with a temporary pooled classifier on the shape
/// classes, one learning rate for all parameters. Only the backbone is kept.
pub fn pretrain_backbone<T: Real>(
    cfg: &TrainConfig,
    train: &[ImageSample],
    test: &[ImageSample],
    norm: &Normalization,
    n_classes: usize,
) -> Result<PretrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("pretraining needs a non-empty training split".into()));
    }
    let all: Vec<&ImageSample> = train.iter().collect();
    let labels = labels_of(&all)?;
    let backbone = Backbone::new(&mut stream(cfg.seed, "init-backbone", 0));
    let mut net = PretrainNet::new(backbone, n_classes, &mut stream(cfg.seed, "init-pretrain-fc", 0));
    let mut opt = Sgd::new(cfg.momentum);
    let mut log = Vec::with_capacity(cfg.pretrain_epochs);
    let mut initial_loss = None;
    let (w, h) = (train[0].width, train[0].height);
    let toggles = if cfg.pretrain_augment { cfg.augment } else { AugmentToggles::OFF };

    for epoch in 0..cfg.pretrain_epochs {
        let start = Instant::now();
        let lr = lr_at(epoch, cfg.pretrain_lr, cfg.lr_decay, cfg.pretrain_lr_period);
        let order = epoch_order(cfg.seed, "pretrain-order", epoch, train.len());
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&ImageSample> = chunk.iter().map(|&i| all[i]).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let pos = bi * cfg.batch_size;
            let mut rngs = sample_rngs(cfg.seed, "pretrain-aug", epoch, pos..pos + chunk.len());
            let batch = AugmentedBatch::<T>::build(&samples, &mut rngs, toggles, norm, w, h)?;
            let mut g = Graph::new();
            let mut bound = Bindings::default();
            let x = g.constant(batch.images);
            let z = net.forward(&mut g, x, &mut bound)?;
            let loss = cls_node(&mut g, z, &y)?;
            let lv = g.value(loss).item().to_f64();
            initial_loss.get_or_insert(lv);
            g.backward(loss)?;
            let grads = collect_grads(&g, &bound);
            opt.step(&mut net, &grads, &|_| lr)?;
            loss_sum += lv;
            batches += 1;
        }
        let cls = loss_sum / batches as f64;
        log.push(EpochLog {
            epoch,
            lr_backbone: lr,
            lr_head: lr,
            cls_loss: cls,
            mask_loss: 0.0,
            total_loss: total_loss(cls, 0.0, 0.0),
            wall_ms: elapsed_ms(start),
            threads: cfg.threads,
        });
    }

    let train_acc = accuracy(&classify(&net, train, norm, 100)?, &labels);
    let test_refs: Vec<&ImageSample> = test.iter().collect();
    let test_acc = if test.is_empty() {
        0.0
    } else {
        accuracy(&classify(&net, test, norm, 100)?, &labels_of(&test_refs)?)
    };
    Ok(PretrainOutcome {
        backbone: net.backbone,
        initial_loss: initial_loss.unwrap_or(f64::NAN),
        train_acc,
        test_acc,
        log,
    })
}

/// `count` draws of (is_background, index): each picks the background pool
/// with probability one half, then an index uniformly within that pool.
pub fn bc_draws(rng: &mut Rng, n_target: usize, n_background: usize, count: usize) -> Vec<(bool, usize)> {
    (0..count)
        .map(|_| {
            if rng.random_bool(0.5) {
                (true, rng.random_range(0..n_background))
            } else {
                (false, rng.random_range(0..n_target))
            }
        })
        .collect()
}

/// Background images disjoint from the training pool, for measuring BC
/// accuracy: a dedicated stream of the dataset seed.
pub fn heldout_backgrounds(dataset_seed: u64, count: usize, width: usize, height: usize) -> Vec<ImageSample> {
    gen_background(derive_seed(dataset_seed, "heldout-background", 0), count, width, height)
}

#[derive(Debug, Clone)]
pub struct BcOutcome<T> {
    pub net: BcNet<T>,
    /// Balanced accuracy on held-out targets and held-out backgrounds.
    pub heldout_acc: f64,
    pub log: Vec<EpochLog>,
}

/// Pooled backbone features `[N, F]` under evaluation preprocessing.
fn pooled_features<T: Real>(net: &BcNet<T>, samples: &[ImageSample], norm: &Normalization) -> Result<Tensor<T>> {
    let refs: Vec<&ImageSample> = samples.iter().collect();
    let f = net.backbone.out_channels();
    let mut data = Vec::with_capacity(samples.len() * f);
    for chunk in refs.chunks(100) {
        let x = input_batch::<T>(chunk, Some(norm), chunk[0].height, chunk[0].width)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let p = net.features(&mut g, xv)?;
        data.extend_from_slice(g.value(p).data());
    }
    Tensor::new(vec![samples.len(), f], data)
}

fn bc_logits<T: Real>(net: &BcNet<T>, features: &Tensor<T>) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let z = net.head(&mut g, x, &mut Bindings::default())?;
    Ok(g.value(z).data().iter().map(|v| v.to_f64()).collect())
}

/// Trains the BC head on a frozen backbone. Each epoch makes as many draws
/// as there are target images.
#[allow(clippy::too_many_arguments)]
pub fn train_bc<T: Real>(
    cfg: &TrainConfig,
    targets: &[ImageSample],
    backgrounds: &[ImageSample],
    heldout_targets: &[ImageSample],
    heldout_backgrounds: &[ImageSample],
    norm: &Normalization,
    backbone: Backbone<T>,
) -> Result<BcOutcome<T>> {
    cfg.validate()?;
    if backgrounds.is_empty() {
        return Err(Error::Dataset("BC training needs at least one background image".into()));
    }
    if targets.is_empty() {
        return Err(Error::Dataset("BC training needs at least one target image".into()));
    }
    let mut net = BcNet::new(backbone, &mut stream(cfg.seed, "init-bc-fc", 0));
    let tf = pooled_features(&net, targets, norm)?;
    let bf = pooled_features(&net, backgrounds, norm)?;
    let f = net.backbone.out_channels();
    let mut opt = Sgd::new(cfg.momentum);
    let mut log = Vec::with_capacity(cfg.bc_epochs);

    for epoch in 0..cfg.bc_epochs {
        let start = Instant::now();
        let lr = lr_at(epoch, cfg.lr_head, cfg.lr_decay, cfg.lr_period);
        let draws = bc_draws(&mut stream(cfg.seed, "bc-draws", epoch as u64), targets.len(), backgrounds.len(), targets.len());
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in draws.chunks(cfg.batch_size) {
            let mut x = Vec::with_capacity(chunk.len() * f);
            let mut y = Vec::with_capacity(chunk.len());
            for &(bg, i) in chunk {
                let src = if bg { bf.outer(i) } else { tf.outer(i) };
                x.extend_from_slice(src);
                y.push(if bg { 0.0 } else { 1.0 });
            }
            let mut g = Graph::new();
            let mut bound = Bindings::default();
            let xv = g.constant(Tensor::new(vec![chunk.len(), f], x)?);
            let z = net.head(&mut g, xv, &mut bound)?;
            let loss = bce_node(&mut g, z, &y)?;
            loss_sum += g.value(loss).item().to_f64();
            batches += 1;
            g.backward(loss)?;
            let grads = collect_grads(&g, &bound);
            opt.step(&mut net, &grads, &|_| lr)?;
        }
        let cls = loss_sum / batches as f64;
        log.push(EpochLog {
            epoch,
            lr_backbone: 0.0,
            lr_head: lr,
            cls_loss: cls,
            mask_loss: 0.0,
            total_loss: total_loss(cls, 0.0, 0.0),
            wall_ms: elapsed_ms(start),
            threads: cfg.threads,
        });
    }

    let rate = |samples: &[ImageSample], want_target: bool| -> Result<Option<f64>> {
        if samples.is_empty() {
            return Ok(None);
        }
        let z = bc_logits(&net, &pooled_features(&net, samples, norm)?)?;
        let hits = z.iter().filter(|&&v| (v > 0.0) == want_target).count();
        Ok(Some(hits as f64 / z.len() as f64))
    };
    let rates: Vec<f64> = [rate(heldout_targets, true)?, rate(heldout_backgrounds, false)?]
        .into_iter()
        .flatten()
        .collect();
    let heldout_acc = if rates.is_empty() { 0.0 } else { rates.iter().sum::<f64>() / rates.len() as f64 };
    Ok(BcOutcome { net, heldout_acc, log })
}

#[derive(Debug, Clone)]
pub struct JointOutcome<T> {
    pub net: CtNet<T>,
    pub log: Vec<EpochLog>,
}

/// Joint training of the classification network. Masks come from the fixed
/// BC model and enter the loss as constants. With `lambda_mask = 0` the mask
/// term is logged but never joins the graph that is differentiated.
pub fn train_bcct<T: Real>(
    cfg: &TrainConfig,
    train: &[ImageSample],
    norm: &Normalization,
    backbone: Backbone<T>,
    bc: &BcNet<T>,
    n_classes: usize,
) -> Result<JointOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("joint training needs a non-empty training split".into()));
    }
    let all: Vec<&ImageSample> = train.iter().collect();
    let labels = labels_of(&all)?;
    let settings = cfg.mask_settings();
    let clean_masks: Vec<BinaryMask> = if cfg.masks_on_augmented {
        Vec::new()
    } else {
        bc_masks(bc, &all, norm, &settings, 100)?
    };
    let mut net = CtNet::new(backbone, n_classes, &mut stream(cfg.seed, "init-ct", 0))?;
    let mut opt = Sgd::new(cfg.momentum);
    let mut log = Vec::with_capacity(cfg.epochs);
    let (w, h) = (train[0].width, train[0].height);
    let toggles: AugmentToggles = cfg.augment;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr_b = lr_at(epoch, cfg.lr_backbone, cfg.lr_decay, cfg.lr_period);
        let lr_h = lr_at(epoch, cfg.lr_head, cfg.lr_decay, cfg.lr_period);
        let order = epoch_order(cfg.seed, "joint-order", epoch, train.len());
        let (mut cls_sum, mut mask_sum, mut batches) = (0.0, 0.0, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&ImageSample> = chunk.iter().map(|&i| all[i]).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let pos = bi * cfg.batch_size;
            let mut rngs = sample_rngs(cfg.seed, "joint-aug", epoch, pos..pos + chunk.len());
            let batch = AugmentedBatch::<T>::build(&samples, &mut rngs, toggles, norm, w, h)?;
            let masks: Vec<BinaryMask> = if cfg.masks_on_augmented {
                mask_for_batch(bc, &batch.images, &settings)?
            } else {
                chunk
                    .iter()
                    .zip(&batch.transforms)
                    .map(|(&i, t)| t.replay_mask(&clean_masks[i], w, h))
                    .collect::<Result<_>>()?
            };

            let mut g = Graph::new();
            let mut bound = Bindings::default();
            let x = g.constant(batch.images);
            let out = net.forward(&mut g, x, true, &mut bound)?;
            let cam = out.cam.expect("cam branch requested");
            let cls = cls_node(&mut g, out.logits, &y)?;
            let mut mask = mask_node(&mut g, cam, &masks, cfg.full_bce)?;
            if cfg.mask_mean {
                mask = g.scale(mask, T::from_f64(1.0 / (w * h) as f64))?;
            }
            let root = if cfg.lambda_mask > 0.0 {
                let weighted = g.scale(mask, T::from_f64(cfg.lambda_mask))?;
                g.add(cls, weighted)?
            } else {
                cls
            };
            cls_sum += g.value(cls).item().to_f64();
            mask_sum += g.value(mask).item().to_f64();
            batches += 1;
            g.backward(root)?;
            let grads = collect_grads(&g, &bound);
            opt.step(&mut net, &grads, &|name| if name.starts_with("backbone.") { lr_b } else { lr_h })?;
        }
        let cls = cls_sum / batches as f64;
        let mask = mask_sum / batches as f64;
        log.push(EpochLog {
            epoch,
            lr_backbone: lr_b,
            lr_head: lr_h,
            cls_loss: cls,
            mask_loss: mask,
            total_loss: total_loss(cls, mask, cfg.lambda_mask),
            wall_ms: elapsed_ms(start),
            threads: cfg.threads,
        });
    }
    Ok(JointOutcome { net, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_split_evenly() {
        let d = bc_draws(&mut stream(1, "t", 0), 2000, 60, 10_000);
        let bg = d.iter().filter(|(b, _)| *b).count() as f64 / 1e4;
        assert!((0.48..=0.52).contains(&bg), "{bg}");
        assert!(d.iter().all(|&(b, i)| if b { i < 60 } else { i < 2000 }));
    }

    #[test]
    fn argmax_prefers_first_maximum() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
        assert_eq!(accuracy(&[1, 2, 3], &[1, 0, 3]), 2.0 / 3.0);
    }
}
