use std::collections::VecDeque;

use bcct_core::evalkit::{box_from_map, iou, localization_error, mask_validity, BBox, IouRule, LocalizationRecord};
use bcct_core::nets::{Backbone, BcNet, Parameters};
use bcct_core::rng::stream;
use bcct_core::saliency::{gradient_maps, largest_component, threshold_mask, BinaryMask, ChannelReduction, GradientMap};
use bcct_core::synthdata::gen_labeled;
use bcct_core::Tensor;
use proptest::prelude::*;

fn flood_largest(values: &[u8], w: usize, h: usize) -> usize {
    let mut seen = vec![false; values.len()];
    let mut best = 0;
    for s in 0..values.len() {
        if values[s] == 0 || seen[s] {
            continue;
        }
        seen[s] = true;
        let mut q = VecDeque::from([s]);
        let mut size = 0;
        while let Some(p) = q.pop_front() {
            size += 1;
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if values[n] == 1 && !seen[n] {
                    seen[n] = true;
                    q.push_back(n);
                }
            }
        }
        best = best.max(size);
    }
    best
}

fn map_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 16 * 16)
}

fn box_strategy(w: usize, h: usize) -> impl Strategy<Value = BBox> {
    (0..w, 0..h).prop_flat_map(move |(x0, y0)| {
        (x0 + 1..=w, y0 + 1..=h).prop_map(move |(x1, y1)| BBox::new(x0, y0, x1, y1).unwrap())
    })
}

fn raster(b: &BBox, w: usize) -> Vec<usize> {
    (b.y0..b.y1).flat_map(|y| (b.x0..b.x1).map(move |x| y * w + x)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn threshold_is_monotone_in_delta(v in map_strategy(), d1 in 0.01f64..=1.0, d2 in 0.01f64..=1.0) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let map = GradientMap::new(16, 16, v).unwrap();
        let m1 = threshold_mask(&map, lo).unwrap();
        let m2 = threshold_mask(&map, hi).unwrap();
        prop_assert!(m2.values().iter().zip(m1.values()).all(|(a, b)| a <= b));
    }

    #[test]
    fn threshold_is_scale_invariant(v in map_strategy(), d in 0.01f64..=1.0, k in prop_oneof![Just(2.0f64), Just(0.5), Just(4.0), Just(0.25)]) {
        let a = threshold_mask(&GradientMap::new(16, 16, v.clone()).unwrap(), d).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
        let b = threshold_mask(&GradientMap::new(16, 16, scaled).unwrap(), d).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn threshold_agrees_with_pixel_comparison(v in map_strategy(), d in 0.01f64..=1.0) {
        let max = v.iter().copied().fold(0.0, f64::max);
        let m = threshold_mask(&GradientMap::new(16, 16, v.clone()).unwrap(), d).unwrap();
        for (b, x) in m.values().iter().zip(&v) {
            prop_assert_eq!(*b == 1, *x >= d * max);
        }
    }

    #[test]
    fn largest_component_matches_flood_fill(grid in prop::collection::vec(prop::bool::weighted(0.5), 20 * 20)) {
        let bits: Vec<u8> = grid.iter().map(|&b| u8::from(b)).collect();
        let kept = largest_component(&BinaryMask::new(20, 20, bits.clone()).unwrap());
        prop_assert!(kept.count_ones() <= bits.iter().filter(|&&b| b == 1).count());
        prop_assert_eq!(kept.count_ones(), flood_largest(&bits, 20, 20));
        prop_assert!(kept.values().iter().zip(&bits).all(|(k, b)| k <= b));
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in box_strategy(30, 30), b in box_strategy(30, 30)) {
        let (x, y) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn top5_error_never_exceeds_top1(
        recs in prop::collection::vec((0usize..5, prop::collection::vec(0.0f64..1.0, 5)), 1..30),
        strict in any::<bool>(),
    ) {
        let rule = if strict { IouRule::Strict } else { IouRule::AtLeast };
        let gt = BBox::new(0, 0, 10, 10).unwrap();
        let records: Vec<LocalizationRecord> = recs
            .iter()
            .map(|(label, widths)| {
                let boxes = widths.iter().map(|w| BBox::new(0, 0, 1 + (w * 9.0) as usize, 10).unwrap()).collect();
                LocalizationRecord::new("r".into(), *label, vec![0, 1, 2, 3, 4], boxes, gt, rule)
            })
            .collect();
        let t1 = localization_error(&records, 1, rule).unwrap();
        let t5 = localization_error(&records, 5, rule).unwrap();
        prop_assert!(t5 <= t1);
        prop_assert!(records.iter().all(|r| !r.top1_correct || r.top5_correct));
    }
}

#[test]
fn mask_validity_matches_rasterized_oracle() {
    use rand::Rng as _;
    let mut rng = stream(11, "validity", 0);
    let (w, h) = (24, 24);
    let pick = |rng: &mut bcct_core::rng::Rng| {
        let x0 = rng.random_range(0..w);
        let y0 = rng.random_range(0..h);
        BBox::new(x0, y0, rng.random_range(x0 + 1..=w), rng.random_range(y0 + 1..=h)).unwrap()
    };
    for _ in 0..1000 {
        let m = pick(&mut rng);
        let gt = pick(&mut rng);
        let mut bits = vec![0u8; w * h];
        for p in raster(&m, w) {
            bits[p] = 1;
        }
        let mask = BinaryMask::new(w, h, bits).unwrap();
        let a: std::collections::HashSet<usize> = raster(&m, w).into_iter().collect();
        let b: std::collections::HashSet<usize> = raster(&gt, w).into_iter().collect();
        let inter = a.intersection(&b).count() as f64;
        let union = a.union(&b).count() as f64;
        let want = inter / union > 0.5 || b.is_subset(&a);
        assert_eq!(mask_validity(&mask, &gt), want, "mask {m:?} gt {gt:?}");
    }
}

#[test]
fn gt_masks_reproduce_gt_boxes_on_a_full_test_split() {
    let samples = gen_labeled(2024, 400, 8, 64, 64).unwrap();
    for s in &samples {
        let m: Vec<f64> = s.gt_mask.as_ref().unwrap().values().iter().map(|&v| v as f64).collect();
        for tau in [0.1, 0.5, 1.0] {
            let (b, warn) = box_from_map(&m, 64, 64, tau).unwrap();
            assert_eq!(Some(b), s.gt_box, "{}", s.id);
            assert!(warn.is_none());
        }
    }
}

#[test]
fn hand_tallied_localization_fixture() {
    let gt = BBox::new(10, 10, 30, 30).unwrap();
    let hit = BBox::new(10, 10, 30, 28).unwrap(); // IoU 0.9
    let half = BBox::new(10, 10, 30, 20).unwrap(); // IoU exactly 0.5
    let miss = BBox::new(0, 0, 5, 5).unwrap();
    let rec = |label: usize, top5: Vec<usize>, boxes: Vec<BBox>| {
        LocalizationRecord::new("f".into(), label, top5, boxes, gt, IouRule::Strict)
    };
    let five = |first: BBox, rest: BBox| vec![first, rest, rest, rest, rest];
    let records = vec![
        rec(0, vec![0, 1, 2, 3, 4], five(hit, miss)),  // top1 and top5
        rec(0, vec![1, 0, 2, 3, 4], vec![miss, hit, miss, miss, miss]), // top5 only
        rec(0, vec![0, 1, 2, 3, 4], five(half, hit)),  // strict 0.5 at rank 1; no other rank has label 0
        rec(2, vec![0, 1, 3, 4, 5], five(hit, hit)),   // label absent
        rec(1, vec![1, 0, 2, 3, 4], five(miss, hit)),  // right label, wrong box
        rec(3, vec![0, 1, 2, 4, 3], five(miss, hit)),  // rank 5 correct
        rec(4, vec![4, 0, 1, 2, 3], five(hit, miss)),  // top1
        rec(0, vec![0, 1, 2, 3, 4], five(miss, hit)),  // wrong box at the only matching rank
        rec(2, vec![1, 2, 0, 3, 4], vec![miss, hit, miss, miss, miss]), // rank 2 correct
        rec(1, vec![1, 0, 2, 3, 4], five(hit, hit)),   // top1
    ];
    // Top-1 correct: records 0, 6, 9. Top-5 correct: 0, 1, 5, 6, 8, 9.
    assert!((localization_error(&records, 1, IouRule::Strict).unwrap() - 70.0).abs() < 1e-12);
    assert!((localization_error(&records, 5, IouRule::Strict).unwrap() - 40.0).abs() < 1e-12);
    // Admitting IoU == 0.5 adds record 2 at both ranks.
    let geq: Vec<_> = records.iter().map(|r| LocalizationRecord::new(r.image_id.clone(), r.label, r.top5.clone(), r.boxes.clone(), gt, IouRule::AtLeast)).collect();
    assert!((localization_error(&geq, 1, IouRule::AtLeast).unwrap() - 60.0).abs() < 1e-12);
    assert!((localization_error(&geq, 5, IouRule::AtLeast).unwrap() - 30.0).abs() < 1e-12);
}

#[test]
fn gradient_maps_leave_parameters_untouched() {
    use rand::Rng as _;
    let net = BcNet::<f32>::new(Backbone::new(&mut stream(8, "bb", 0)), &mut stream(8, "fc", 0));
    let before = net.to_checkpoint().to_bytes().unwrap();
    let mut rng = stream(8, "x", 0);
    let x = Tensor::new(vec![2, 3, 16, 16], (0..2 * 3 * 256).map(|_| rng.random::<f32>()).collect()).unwrap();
    for r in [ChannelReduction::MaxAbs, ChannelReduction::MeanAbs] {
        let maps = gradient_maps(&net, &x, r).unwrap();
        assert_eq!(maps.len(), 2);
    }
    assert_eq!(net.to_checkpoint().to_bytes().unwrap(), before);
}
