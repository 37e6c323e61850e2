//! Losses: binary cross-entropy for the BC model, softmax cross-entropy for
//! classification, and the pixel-level mask loss on the CAM branch.
//!
//! Each loss comes in two forms: a plain function returning the value, and a
//! graph node (`*_node`) recording the batch mean together with its gradient.
//! Both use the same per-element arithmetic.

use crate::error::{Error, Result};
use crate::saliency::BinaryMask;
use crate::tensor::{kernels::sigmoid, Graph, Real, Tensor, Var};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;
/// CAM values are clamped to `[CAM_EPS, 1 - CAM_EPS]` before the log.
pub const CAM_EPS: f64 = 1e-6;

fn check_label(y: f64) -> Result<()> {
    if y == 0.0 || y == 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("binary label must be 0 or 1, got {y}")))
    }
}

/// `-(y ln p + (1 - y) ln(1 - p))` with `p` clamped. Label 0 marks a
/// background image, 1 a target image.
pub fn bce_loss(p: f64, y: f64) -> Result<f64> {
    check_label(y)?;
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
}

/// Loss and its derivative with respect to the logit `z`.
fn bce_from_logit(z: f64, y: f64) -> (f64, f64) {
    let p = sigmoid(z);
    let clamped = !(PROB_EPS..=1.0 - PROB_EPS).contains(&p);
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let loss = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    (loss, if clamped { 0.0 } else { p - y })
}

/// Batch-mean binary cross-entropy on logits `[N]`.
pub fn bce_node<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[f64]) -> Result<Var> {
    let z = g.value(logits);
    if z.numel() != labels.len() {
        return Err(Error::Shape {
            op: "bce_loss",
            lhs: z.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let inv = 1.0 / labels.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(labels.len());
    for (&zi, &y) in z.data().iter().zip(labels) {
        check_label(y)?;
        let (l, d) = bce_from_logit(zi.to_f64(), y);
        total += l;
        grad.push(T::from_f64(d * inv));
    }
    g.scalar_fn(logits, T::from_f64(total * inv), grad)
}

/// Per-row cross-entropy and softmax of one logit row.
fn cross_entropy_row<T: Real>(row: &[T], label: usize) -> (f64, Vec<f64>) {
    let mx = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - mx).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = mx + total.ln() - row[label].to_f64();
    (loss, exps.into_iter().map(|e| e / total).collect())
}

fn check_logits<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Shape {
            op: "cls_loss",
            lhs: s.to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
        return Err(Error::invalid(format!("class label {bad} out of range for {} classes", s[1])));
    }
    Ok(s[1])
}

/// Mean over the batch of `-ln softmax(logits)[label]`.
pub fn cls_loss<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let n = check_logits(logits, labels)?;
    let total: f64 = logits
        .data()
        .chunks_exact(n)
        .zip(labels)
        .map(|(row, &y)| cross_entropy_row(row, y).0)
        .sum();
    Ok(total / labels.len() as f64)
}

pub fn cls_node<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let z = g.value(logits);
    let n = check_logits(z, labels)?;
    let inv = 1.0 / labels.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(z.numel());
    for (row, &y) in z.data().chunks_exact(n).zip(labels) {
        let (l, probs) = cross_entropy_row(row, y);
        total += l;
        for (c, p) in probs.into_iter().enumerate() {
            let onehot = if c == y { 1.0 } else { 0.0 };
            grad.push(T::from_f64((p - onehot) * inv));
        }
    }
    g.scalar_fn(logits, T::from_f64(total * inv), grad)
}

/// Loss and derivative at one pixel.
#[inline]
fn mask_pixel(m: u8, a: f64, full_bce: bool) -> (f64, f64) {
    let clamped = !(CAM_EPS..=1.0 - CAM_EPS).contains(&a);
    let ac = a.clamp(CAM_EPS, 1.0 - CAM_EPS);
    let (mut loss, mut d) = (0.0, 0.0);
    if m == 1 {
        loss -= ac.ln();
        d -= 1.0 / ac;
    } else if full_bce {
        loss -= (1.0 - ac).ln();
        d += 1.0 / (1.0 - ac);
    }
    (loss, if clamped { 0.0 } else { d })
}

/// `-sum M ln A` over all pixels; with `full_bce` also `-sum (1 - M) ln(1 - A)`.
/// `cam` must hold exactly the mask's `H x W` pixels (any leading unit axes).
pub fn mask_loss<T: Real>(mask: &BinaryMask, cam: &Tensor<T>, full_bce: bool) -> Result<f64> {
    let s = cam.shape();
    let ok = s.len() >= 2
        && s[s.len() - 2] == mask.height()
        && s[s.len() - 1] == mask.width()
        && cam.numel() == mask.len();
    if !ok {
        return Err(Error::Shape {
            op: "mask_loss",
            lhs: vec![mask.height(), mask.width()],
            rhs: s.to_vec(),
        });
    }
    Ok(mask
        .values()
        .iter()
        .zip(cam.data())
        .map(|(&m, &a)| mask_pixel(m, a.to_f64(), full_bce).0)
        .sum())
}

/// Batch mean of [`mask_loss`] for a CAM tensor `[N, 1, H, W]`.
pub fn mask_node<T: Real>(g: &mut Graph<T>, cam: Var, masks: &[BinaryMask], full_bce: bool) -> Result<Var> {
    let a = g.value(cam);
    let s = a.shape();
    let plane = masks.first().map_or(0, BinaryMask::len);
    let aligned = s.len() == 4
        && s[0] == masks.len()
        && s[1] == 1
        && masks.iter().all(|m| m.height() == s[2] && m.width() == s[3]);
    if !aligned {
        return Err(Error::Shape {
            op: "mask_loss",
            lhs: masks.first().map_or(vec![], |m| vec![masks.len(), 1, m.height(), m.width()]),
            rhs: s.to_vec(),
        });
    }
    let inv = 1.0 / masks.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(a.numel());
    for (m, img) in masks.iter().zip(a.data().chunks_exact(plane)) {
        for (&mv, &av) in m.values().iter().zip(img) {
            let (l, d) = mask_pixel(mv, av.to_f64(), full_bce);
            total += l;
            grad.push(T::from_f64(d * inv));
        }
    }
    g.scalar_fn(cam, T::from_f64(total * inv), grad)
}

/// `cls + lambda_mask * mask`; `lambda_mask = 0` is the plain-CAM baseline.
pub fn total_loss(cls: f64, mask: f64, lambda_mask: f64) -> f64 {
    cls + lambda_mask * mask
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn bce_hand_cases() {
        assert!((bce_loss(0.5, 1.0).unwrap() - LN2).abs() < 1e-12);
        assert!((bce_loss(0.5, 0.0).unwrap() - LN2).abs() < 1e-12);
        assert!(bce_loss(1.0, 1.0).unwrap() < 1e-6);
        assert!(bce_loss(0.3, 0.5).is_err());
    }

    #[test]
    fn cls_hand_cases() {
        let z = Tensor::<f64>::zeros(vec![1, 4]);
        assert!((cls_loss(&z, &[2]).unwrap() - 4f64.ln()).abs() < 1e-12);
        let z = Tensor::<f64>::new(vec![1, 3], vec![100.0, 0.0, 0.0]).unwrap();
        assert!(cls_loss(&z, &[0]).unwrap() < 1e-40);
        assert!(cls_loss(&z, &[3]).is_err());
    }

    #[test]
    fn mask_hand_cases() {
        let ones = BinaryMask::new(2, 2, vec![1; 4]).unwrap();
        let half = Tensor::<f64>::full(vec![2, 2], 0.5);
        assert!((mask_loss(&ones, &half, false).unwrap() - 4.0 * LN2).abs() < 1e-12);

        let zeros = BinaryMask::new(2, 2, vec![0; 4]).unwrap();
        assert_eq!(mask_loss(&zeros, &half, false).unwrap(), 0.0);

        let m = BinaryMask::new(2, 2, vec![1, 0, 0, 0]).unwrap();
        let a = Tensor::<f64>::new(vec![2, 2], vec![0.25, 0.9, 0.9, 0.9]).unwrap();
        assert!((mask_loss(&m, &a, false).unwrap() - 4f64.ln()).abs() < 1e-12);

        let wrong = Tensor::<f64>::full(vec![3, 2], 0.5);
        assert!(mask_loss(&m, &wrong, false).is_err());
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(1.0, 2.0, 1.0), 3.0);
        assert_eq!(total_loss(1.0, 2.0, 0.0), 1.0);
        assert_eq!(total_loss(0.5, 0.25, 2.0), 1.0);
    }

    #[test]
    fn nodes_match_plain_functions() {
        let mut g = Graph::<f64>::new();
        let z = g.variable(Tensor::new(vec![2, 3], vec![0.3, -1.2, 2.0, 0.0, 0.5, -0.5]).unwrap());
        let l = cls_node(&mut g, z, &[2, 0]).unwrap();
        let want = cls_loss(g.value(z), &[2, 0]).unwrap();
        assert_eq!(g.value(l).item(), want);

        let masks = vec![BinaryMask::new(2, 2, vec![1, 0, 1, 1]).unwrap()];
        let a = g.variable(Tensor::new(vec![1, 1, 2, 2], vec![0.2, 0.7, 0.6, 0.9]).unwrap());
        let l = mask_node(&mut g, a, &masks, true).unwrap();
        let want = mask_loss(&masks[0], g.value(a), true).unwrap();
        assert!((g.value(l).item() - want).abs() < 1e-15);
    }
}
