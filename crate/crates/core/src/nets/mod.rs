//! The three networks and the three losses.
//!
//! * [`Backbone`]: four 3x3 conv layers (16/32/64/64) with 2x2 max pooling
//!   after the second and fourth; output stride 4.
//! * [`BcNet`]: frozen backbone, global average pooling, one dense logit
//!   ("background" = 0, "target" = 1).
//! * [`CtNet`]: trainable backbone, a score-map head whose global average is
//!   the class logit, and a one-channel CAM branch on the score map.

mod backbone;
mod bc;
mod ct;
pub mod loss;
mod pretrain;

pub use backbone::Backbone;
pub use bc::BcNet;
pub use ct::{CtNet, CtOutputs};
pub use loss::{bce_loss, cls_loss, mask_loss, total_loss};
pub use pretrain::PretrainNet;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Checkpoint, Graph, Real, Tensor, Var};

/// Trainable parameters registered on a graph for one forward pass.
#[derive(Debug, Default, Clone)]
pub struct Bindings {
    pub entries: Vec<(String, Var)>,
}

impl Bindings {
    fn bind<T: Real>(&mut self, g: &mut Graph<T>, name: String, t: &Tensor<T>, trainable: bool) -> Var {
        if trainable {
            let v = g.variable(t.clone());
            self.entries.push((name, v));
            v
        } else {
            g.constant(t.clone())
        }
    }
}

/// Enumerates a network's parameters under their canonical checkpoint names.
pub trait Parameters<T: Real> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut c = Checkpoint::default();
        self.visit(&mut |name, t| c.push(name, t.clone()));
        c
    }

    /// Overwrites every parameter from `ckpt`; shapes must match.
    fn load_checkpoint(&mut self, ckpt: &Checkpoint<T>) -> Result<()> {
        let mut err = None;
        self.visit_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            match ckpt.get(name) {
                None => err = Some(Error::Checkpoint(format!("missing tensor {name:?}"))),
                Some(src) if src.shape() != t.shape() => {
                    err = Some(Error::Checkpoint(format!(
                        "tensor {name:?} has shape {:?}, expected {:?}",
                        src.shape(),
                        t.shape()
                    )))
                }
                Some(src) => t.data_mut().copy_from_slice(src.data()),
            }
        });
        err.map_or(Ok(()), Err)
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }
}

/// A convolution with square kernel, unit stride and "same" zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Conv<T> {
    pub fn kaiming(out_ch: usize, in_ch: usize, k: usize, rng: &mut Rng) -> Self {
        Conv {
            weight: kaiming(vec![out_ch, in_ch, k, k], in_ch * k * k, rng),
            bias: Tensor::zeros(vec![out_ch]),
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        x: Var,
        prefix: &str,
        trainable: bool,
        bound: &mut Bindings,
    ) -> Result<Var> {
        let w = bound.bind(g, format!("{prefix}.weight"), &self.weight, trainable);
        let b = bound.bind(g, format!("{prefix}.bias"), &self.bias, trainable);
        g.conv2d(x, w, b, 1, self.kernel() / 2)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

/// A fully connected layer, weight `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn kaiming(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: kaiming(vec![inputs, outputs], inputs, rng),
            bias: Tensor::zeros(vec![outputs]),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Tensor::zeros(vec![inputs, outputs]),
            bias: Tensor::zeros(vec![outputs]),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        x: Var,
        prefix: &str,
        trainable: bool,
        bound: &mut Bindings,
    ) -> Result<Var> {
        let w = bound.bind(g, format!("{prefix}.weight"), &self.weight, trainable);
        let b = bound.bind(g, format!("{prefix}.bias"), &self.bias, trainable);
        g.dense(x, w, b)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Normal weights with standard deviation `sqrt(2 / fan_in)`.
fn kaiming<T: Real>(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64(z * std)
        })
        .collect();
    Tensor::new(shape, data).expect("kaiming: valid shape")
}

/// Batch tensors must be `[N, C, H, W]` with spatial size divisible by the
/// backbone stride.
pub(crate) fn check_batch(shape: &[usize], channels: usize) -> Result<()> {
    if shape.len() != 4 || shape[1] != channels {
        return Err(Error::Shape {
            op: "network input",
            lhs: shape.to_vec(),
            rhs: vec![0, channels, 0, 0],
        });
    }
    if !shape[2].is_multiple_of(Backbone::<f32>::STRIDE) || !shape[3].is_multiple_of(Backbone::<f32>::STRIDE) {
        return Err(Error::invalid(format!(
            "input spatial size {}x{} is not divisible by {}",
            shape[2],
            shape[3],
            Backbone::<f32>::STRIDE
        )));
    }
    Ok(())
}
