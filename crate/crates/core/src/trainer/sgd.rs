use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nets::{Bindings, Parameters};
use crate::tensor::{Graph, Real};

/// Gradients of the bound parameters, keyed by checkpoint name.
pub type Gradients<T> = BTreeMap<String, Vec<T>>;

/// Reads the gradient of every bound parameter after a backward pass.
/// Parameters the loss does not reach get no entry.
pub fn collect_grads<T: Real>(g: &Graph<T>, bound: &Bindings) -> Gradients<T> {
    let mut out: Gradients<T> = BTreeMap::new();
    for (name, v) in &bound.entries {
        if let Some(grad) = g.grad(*v) {
            match out.get_mut(name) {
                Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, &b)| *a += b),
                None => {
                    out.insert(name.clone(), grad.to_vec());
                }
            }
        }
    }
    out
}

/// SGD with heavy-ball momentum: `v = mu v + g; p -= lr v`. No weight decay.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    /// Updates every parameter of `net` that has a gradient, with the
    /// learning rate `lr(name)`.
    pub fn step(&mut self, net: &mut dyn Parameters<T>, grads: &Gradients<T>, lr: &dyn Fn(&str) -> f64) -> Result<()> {
        let mu = T::from_f64(self.momentum);
        let mut err = None;
        let mut used = 0;
        net.visit_mut(&mut |name, p| {
            let Some(grad) = grads.get(name) else { return };
            used += 1;
            if grad.len() != p.numel() {
                err = Some(Error::Shape {
                    op: "sgd step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![grad.len()],
                });
                return;
            }
            let step = T::from_f64(lr(name));
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![T::zero(); grad.len()]);
            for ((w, vi), &gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
                *vi = mu * *vi + gi;
                *w -= step * *vi;
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if used != grads.len() {
            return Err(Error::invalid("gradient for a parameter the network does not have"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Linear;
    use crate::tensor::Tensor;

    struct One(Linear<f64>);

    impl Parameters<f64> for One {
        fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
            f("w", &self.0.weight);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
            f("w", &mut self.0.weight);
        }
    }

    #[test]
    fn momentum_recurrence() {
        let mut net = One(Linear::zeros(1, 1));
        let mut opt = Sgd::new(0.9);
        let grads: Gradients<f64> = [("w".to_string(), vec![1.0])].into();
        opt.step(&mut net, &grads, &|_| 0.1).unwrap();
        assert!((net.0.weight.data()[0] + 0.1).abs() < 1e-15);
        opt.step(&mut net, &grads, &|_| 0.1).unwrap();
        // v = 0.9 * 1 + 1 = 1.9
        assert!((net.0.weight.data()[0] + 0.29).abs() < 1e-12);
        let stray: Gradients<f64> = [("q".to_string(), vec![1.0])].into();
        assert!(opt.step(&mut net, &stray, &|_| 0.1).is_err());
    }
}
