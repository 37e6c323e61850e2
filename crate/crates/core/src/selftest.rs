//! A fast invariant suite that runs without a test harness: gradient checks
//! of every graph operation and the mask and box oracles.

use std::collections::VecDeque;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::components;
use crate::evalkit::{box_from_map, iou, localization_error, BBox, IouRule, LocalizationRecord};
use crate::nets::loss::{bce_node, cls_node, mask_node};
use crate::rng::{stream, Rng};
use crate::saliency::{largest_component, threshold_mask, BinaryMask, GradientMap};
use crate::synthdata::gen_labeled;
use crate::tensor::gradcheck::check_gradients;
use crate::tensor::{Graph, Tensor, Var};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn normal(rng: &mut Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("valid shape")
}

/// Values bounded away from zero so no kink lies within a difference step.
fn away_from_zero(rng: &mut Rng, shape: Vec<usize>) -> Tensor<f64> {
    let mut t = normal(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (v.abs() + 0.05);
    }
    t
}

/// A shuffled ramp: pairwise gaps of at least 0.01, so max-pool choices are
/// stable under the difference step.
fn distinct(rng: &mut Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape, vals).expect("valid shape")
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> crate::Result<Var>>;

fn gradient_cases(rng: &mut Rng) -> Vec<(&'static str, Vec<Tensor<f64>>, Build)> {
    let labels = vec![1usize, 0, 2];
    let bin = vec![1.0, 0.0, 1.0];
    let mask = BinaryMask::new(4, 4, (0..16).map(|i| u8::from(i % 3 == 0)).collect()).expect("binary");
    vec![
        (
            "conv2d",
            vec![normal(rng, vec![2, 3, 5, 5]), normal(rng, vec![4, 3, 3, 3]), normal(rng, vec![4])],
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 1, 1)),
        ),
        (
            "conv2d_strided",
            vec![normal(rng, vec![1, 2, 6, 6]), normal(rng, vec![3, 2, 3, 3]), normal(rng, vec![3])],
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 2, 0)),
        ),
        (
            "conv2d_pointwise",
            vec![normal(rng, vec![2, 3, 4, 4]), normal(rng, vec![2, 3, 1, 1]), normal(rng, vec![2])],
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 1, 0)),
        ),
        ("maxpool2d", vec![distinct(rng, vec![2, 2, 4, 6])], Box::new(|g, v| g.maxpool2d(v[0], 2, 2))),
        ("gap", vec![normal(rng, vec![2, 3, 3, 4])], Box::new(|g, v| g.gap(v[0]))),
        (
            "dense",
            vec![normal(rng, vec![3, 4]), normal(rng, vec![4, 2]), normal(rng, vec![2])],
            Box::new(|g, v| g.dense(v[0], v[1], v[2])),
        ),
        ("relu", vec![away_from_zero(rng, vec![3, 5])], Box::new(|g, v| g.relu(v[0]))),
        ("sigmoid", vec![normal(rng, vec![3, 5])], Box::new(|g, v| g.sigmoid(v[0]))),
        ("softmax", vec![normal(rng, vec![3, 4])], Box::new(|g, v| g.softmax(v[0]))),
        ("upsample", vec![normal(rng, vec![1, 2, 3, 4])], Box::new(|g, v| g.upsample(v[0], 7, 9))),
        ("sum", vec![normal(rng, vec![2, 5])], Box::new(|g, v| g.sum(v[0]))),
        (
            "add",
            vec![normal(rng, vec![2, 3]), normal(rng, vec![2, 3])],
            Box::new(|g, v| g.add(v[0], v[1])),
        ),
        ("scale", vec![normal(rng, vec![4])], Box::new(|g, v| g.scale(v[0], -1.7))),
        ("reshape", vec![normal(rng, vec![2, 6])], Box::new(|g, v| g.reshape(v[0], vec![3, 4]))),
        ("bce_loss", vec![normal(rng, vec![3])], Box::new(move |g, v| bce_node(g, v[0], &bin))),
        ("cls_loss", vec![normal(rng, vec![3, 4])], Box::new(move |g, v| cls_node(g, v[0], &labels))),
        (
            "mask_loss",
            vec![normal(rng, vec![1, 1, 4, 4])],
            Box::new(move |g, v| {
                let a = g.sigmoid(v[0])?;
                mask_node(g, a, std::slice::from_ref(&mask), true)
            }),
        ),
    ]
}

/// Random instances drawn per operation.
pub const GRADIENT_TRIALS: usize = 20;

/// Largest elementwise `|analytic - numeric| / max(1, |numeric|)` tolerated.
pub const GRADIENT_TOLERANCE: f64 = 1e-6;

/// One check per graph operation and loss node, each over
/// [`GRADIENT_TRIALS`] random instances.
pub fn gradient_suite(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    gradient_checks(seed, &mut out);
    out
}

fn gradient_checks(seed: u64, out: &mut Vec<Check>) {
    let mut rng = stream(seed, "selftest-grad", 0);
    let mut worst: Vec<(&'static str, Result<f64, String>)> = Vec::new();
    for trial in 0..GRADIENT_TRIALS {
        for (k, (name, inputs, build)) in gradient_cases(&mut rng).into_iter().enumerate() {
            let n_out = {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
                build(&mut g, &vars).map(|o| g.value(o).numel())
            };
            let result = n_out.and_then(|n| {
                let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                check_gradients(&inputs, &w, 1e-5, build.as_ref())
            });
            let err = result
                .map(|errs| errs.iter().map(|e| e.relative).fold(0.0, f64::max))
                .map_err(|e| e.to_string());
            if trial == 0 {
                worst.push((name, err));
            } else if let (Ok(w), Ok(e)) = (&mut worst[k].1, &err) {
                *w = w.max(*e);
            } else if err.is_err() {
                worst[k].1 = err;
            }
        }
    }
    for (name, err) in worst {
        out.push(match err {
            Ok(e) => Check {
                name: format!("gradient {name}"),
                passed: e < GRADIENT_TOLERANCE,
                detail: format!("max relative error {e:.2e} over {GRADIENT_TRIALS} instances"),
            },
            Err(e) => Check {
                name: format!("gradient {name}"),
                passed: false,
                detail: e,
            },
        });
    }
}

/// Size of the largest 4-connected component by breadth-first search.
fn flood_largest(values: &[u8], w: usize, h: usize) -> usize {
    let mut seen = vec![false; values.len()];
    let mut best = 0;
    for start in 0..values.len() {
        if values[start] == 0 || seen[start] {
            continue;
        }
        let mut size = 0;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (x, y) = (p % w, p / w);
            let mut push = |q: usize| {
                if values[q] == 1 && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                push(p - 1);
            }
            if x + 1 < w {
                push(p + 1);
            }
            if y > 0 {
                push(p - w);
            }
            if y + 1 < h {
                push(p + w);
            }
        }
        best = best.max(size);
    }
    best
}

fn mask_checks(seed: u64, out: &mut Vec<Check>) {
    let mut rng = stream(seed, "selftest-mask", 0);
    let mut threshold_ok = true;
    let mut component_ok = true;
    for _ in 0..100 {
        let vals: Vec<f64> = (0..64 * 64).map(|_| rng.random::<f64>()).collect();
        let map = GradientMap::new(64, 64, vals.clone()).expect("valid map");
        let delta = rng.random_range(0.05..=1.0);
        let m = threshold_mask(&map, delta).expect("valid delta");
        let max = vals.iter().copied().fold(0.0, f64::max);
        threshold_ok &= m.values().iter().zip(&vals).all(|(&b, &v)| (b == 1) == (v >= delta * max));

        let grid: Vec<u8> = (0..32 * 32).map(|_| u8::from(rng.random_bool(0.45))).collect();
        let mask = BinaryMask::new(32, 32, grid.clone()).expect("binary");
        let kept = largest_component(&mask);
        let (_, comps) = components::label(kept.values(), 32, 32);
        component_ok &= kept.count_ones() == flood_largest(&grid, 32, 32) && comps.len() <= 1;
    }
    out.push(Check {
        name: "threshold_mask matches per-pixel comparison".into(),
        passed: threshold_ok,
        detail: "100 random 64x64 maps".into(),
    });
    out.push(Check {
        name: "largest_component matches flood fill".into(),
        passed: component_ok,
        detail: "100 random 32x32 grids".into(),
    });
}

fn box_checks(seed: u64, out: &mut Vec<Check>) {
    let b = |x0, y0, x1, y1| BBox::new(x0, y0, x1, y1).expect("valid box");
    let third = (iou(&b(0, 0, 10, 10), &b(5, 0, 15, 10)) - 1.0 / 3.0).abs() < 1e-15;
    let disjoint = iou(&b(0, 0, 2, 2), &b(5, 5, 6, 6)) == 0.0;
    out.push(Check {
        name: "iou hand cases".into(),
        passed: third && disjoint,
        detail: "(0,0,10,10) vs (5,0,15,10) = 1/3; disjoint = 0".into(),
    });

    let gt = b(0, 0, 10, 10);
    let rec = |bx: BBox| LocalizationRecord::new("x".into(), 0, vec![0], vec![bx], gt, IouRule::Strict);
    let err = localization_error(&[rec(b(0, 0, 9, 10)), rec(b(0, 0, 5, 10))], 1, IouRule::Strict);
    out.push(Check {
        name: "strict IoU of exactly 0.5 is a miss".into(),
        passed: err.is_ok_and(|e| e == 50.0),
        detail: "two records, one at IoU 0.5".into(),
    });

    let samples = gen_labeled(seed, 40, 8, 64, 64).expect("valid parameters");
    let exact = samples.iter().all(|s| {
        let m = s.gt_mask.as_ref().expect("labeled sample has a mask");
        let vals: Vec<f64> = m.values().iter().map(|&v| v as f64).collect();
        box_from_map(&vals, 64, 64, 0.5).is_ok_and(|(bx, _)| Some(bx) == s.gt_box)
    });
    out.push(Check {
        name: "box_from_map(gt_mask) == gt_box".into(),
        passed: exact,
        detail: "40 synthetic samples".into(),
    });
}

/// Runs every check; the suite passes when all of them do.
pub fn run(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    gradient_checks(seed, &mut out);
    mask_checks(seed, &mut out);
    box_checks(seed, &mut out);
    out
}
