use super::{Backbone, Bindings, Conv, Parameters};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Width of the score-map head and the CAM branch.
pub const HEAD_WIDTH: usize = 64;

/// Classification network with a CAM branch.
#[derive(Debug, Clone, PartialEq)]
pub struct CtNet<T> {
    pub backbone: Backbone<T>,
    /// conv3x3-relu, conv3x3-relu, conv1x1 to `n_classes` channels.
    pub head: [Conv<T>; 3],
    /// conv3x3-relu, conv3x3-relu, conv1x1 to one channel, on the score map.
    pub cam: [Conv<T>; 3],
}

/// Graph handles produced by [`CtNet::forward`].
#[derive(Debug, Clone, Copy)]
pub struct CtOutputs {
    /// `[N, n_classes]`, the spatial mean of `score_map`.
    pub logits: Var,
    /// `[N, n_classes, H/4, W/4]`.
    pub score_map: Var,
    /// `[N, 1, H, W]`, values in (0, 1). Absent when the branch was skipped.
    pub cam: Option<Var>,
}

impl<T: Real> CtNet<T> {
    pub fn new(backbone: Backbone<T>, n_classes: usize, rng: &mut Rng) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {n_classes}")));
        }
        let f = backbone.out_channels();
        let head = [
            Conv::kaiming(HEAD_WIDTH, f, 3, rng),
            Conv::kaiming(HEAD_WIDTH, HEAD_WIDTH, 3, rng),
            Conv::kaiming(n_classes, HEAD_WIDTH, 1, rng),
        ];
        let cam = [
            Conv::kaiming(HEAD_WIDTH, n_classes, 3, rng),
            Conv::kaiming(HEAD_WIDTH, HEAD_WIDTH, 3, rng),
            Conv::kaiming(1, HEAD_WIDTH, 1, rng),
        ];
        let mut backbone = backbone;
        backbone.frozen = false;
        Ok(CtNet { backbone, head, cam })
    }

    pub fn n_classes(&self) -> usize {
        self.head[2].weight.shape()[0]
    }

    /// Runs the network; the CAM branch is evaluated only when `with_cam`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, with_cam: bool, bound: &mut Bindings) -> Result<CtOutputs> {
        let (height, width) = (g.shape(x)[2], g.shape(x)[3]);
        let mut h = self.backbone.forward(g, x, bound)?;
        for (i, conv) in self.head.iter().enumerate() {
            h = conv.forward(g, h, &format!("head.conv{}", i + 1), true, bound)?;
            if i < 2 {
                h = g.relu(h)?;
            }
        }
        let score_map = h;
        let logits = g.gap(score_map)?;
        let cam = if with_cam {
            let mut a = score_map;
            for (i, conv) in self.cam.iter().enumerate() {
                a = conv.forward(g, a, &format!("cam.conv{}", i + 1), true, bound)?;
                if i < 2 {
                    a = g.relu(a)?;
                }
            }
            let a = g.sigmoid(a)?;
            Some(g.upsample(a, height, width)?)
        } else {
            None
        };
        Ok(CtOutputs { logits, score_map, cam })
    }
}

impl<T: Real> Parameters<T> for CtNet<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.backbone.visit(f);
        for (i, c) in self.head.iter().enumerate() {
            c.visit(&format!("head.conv{}", i + 1), f);
        }
        for (i, c) in self.cam.iter().enumerate() {
            c.visit(&format!("cam.conv{}", i + 1), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.backbone.visit_mut(f);
        for (i, c) in self.head.iter_mut().enumerate() {
            c.visit_mut(&format!("head.conv{}", i + 1), f);
        }
        for (i, c) in self.cam.iter_mut().enumerate() {
            c.visit_mut(&format!("cam.conv{}", i + 1), f);
        }
    }
}
