use bcct_core::nets::{Backbone, BcNet, Bindings};
use bcct_core::rng::stream;
use bcct_core::{Graph, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, data).unwrap()
}

/// Direct six-loop convolution.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, k) = (ws[0], ws[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(n * o * oh * ow);
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = b[oi];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                s += xv * w.data()[((oi * c + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
    }
    out
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_direct_summation(
        x in values(2 * 3 * 6 * 5),
        w in values(4 * 3 * 3 * 3),
        b in values(4),
        stride in 1usize..=2,
        pad in 0usize..=1,
    ) {
        let xt = tensor(vec![2, 3, 6, 5], x);
        let wt = tensor(vec![4, 3, 3, 3], w);
        let want = conv_oracle(&xt, &wt, &b, stride, pad);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(xt), g.constant(wt), g.constant(tensor(vec![4], b)));
        let y = g.conv2d(xv, wv, bv, stride, pad).unwrap();
        for (a, e) in g.value(y).data().iter().zip(&want) {
            prop_assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(x in values(3 * 7), scale in 0.1f64..200.0) {
        let mut g = Graph::new();
        let v = g.constant(tensor(vec![3, 7], x.iter().map(|v| v * scale).collect()));
        let p = g.softmax(v).unwrap();
        for row in g.value(p).data().chunks(7) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&q| (0.0..=1.0).contains(&q) && q.is_finite()));
        }
    }

    #[test]
    fn forward_is_pure_and_backward_is_deterministic(x in values(2 * 3 * 4 * 4), w in values(2 * 3 * 3 * 3)) {
        let run = || {
            let mut g = Graph::new();
            let xv = g.variable(tensor(vec![2, 3, 4, 4], x.clone()));
            let wv = g.variable(tensor(vec![2, 3, 3, 3], w.clone()));
            let bv = g.variable(tensor(vec![2], vec![0.1, -0.2]));
            let c = g.conv2d(xv, wv, bv, 1, 1).unwrap();
            let r = g.relu(c).unwrap();
            let p = g.maxpool2d(r, 2, 2).unwrap();
            let u = g.upsample(p, 5, 5).unwrap();
            let s = g.sigmoid(u).unwrap();
            let root = g.sum(s).unwrap();
            g.backward(root).unwrap();
            let out = g.value(s).data().to_vec();
            (out, g.grad(xv).unwrap().to_vec(), g.grad(wv).unwrap().to_vec())
        };
        let (a, b) = (run(), run());
        prop_assert!(a.0.iter().zip(&b.0).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert!(a.1.iter().zip(&b.1).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert!(a.2.iter().zip(&b.2).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert!(a.0.iter().chain(&a.1).chain(&a.2).all(|v| v.is_finite()));
    }

    #[test]
    fn upsample_of_constant_is_constant(c in -5.0f64..5.0, h in 1usize..5, w in 1usize..5, th in 5usize..12, tw in 5usize..12) {
        let mut g = Graph::new();
        let v = g.constant(Tensor::full(vec![1, 1, h, w], c));
        let u = g.upsample(v, th, tw).unwrap();
        prop_assert!(g.value(u).data().iter().all(|&x| (x - c).abs() < 1e-12));
    }
}

#[test]
fn bc_input_gradient_matches_finite_differences() {
    use rand::Rng as _;
    let net = BcNet::<f64>::new(Backbone::new(&mut stream(4, "bb", 0)), &mut stream(4, "fc", 0));
    let mut rng = stream(4, "img", 0);
    let img: Vec<f64> = (0..3 * 16 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let logit = |data: &[f64]| {
        let mut g = Graph::new();
        let x = g.constant(tensor(vec![1, 3, 16, 16], data.to_vec()));
        let z = net.forward(&mut g, x, &mut Bindings::default()).unwrap();
        g.value(z).data()[0]
    };
    let mut g = Graph::new();
    let x = g.variable(tensor(vec![1, 3, 16, 16], img.clone()));
    let z = net.forward(&mut g, x, &mut Bindings::default()).unwrap();
    let root = g.sum(z).unwrap();
    g.backward(root).unwrap();
    let grad = g.grad(x).unwrap().to_vec();
    let h = 1e-5;
    for _ in 0..5 {
        let i = rng.random_range(0..img.len());
        let (mut p, mut m) = (img.clone(), img.clone());
        p[i] += h;
        m[i] -= h;
        let num = (logit(&p) - logit(&m)) / (2.0 * h);
        let rel = (grad[i] - num).abs() / num.abs().max(1.0);
        assert!(rel < 1e-4, "pixel {i}: analytic {} numeric {num}", grad[i]);
    }
}
