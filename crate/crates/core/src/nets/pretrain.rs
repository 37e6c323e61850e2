use super::{Backbone, Bindings, Linear, Parameters};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Backbone with a throwaway pooled classifier, used only to pretrain the
/// backbone on the shape classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainNet<T> {
    pub backbone: Backbone<T>,
    pub fc: Linear<T>,
}

impl<T: Real> PretrainNet<T> {
    pub fn new(backbone: Backbone<T>, n_classes: usize, rng: &mut Rng) -> Self {
        let fc = Linear::kaiming(backbone.out_channels(), n_classes, rng);
        PretrainNet { backbone, fc }
    }

    /// Class logits `[N, n_classes]`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, bound: &mut Bindings) -> Result<Var> {
        let f = self.backbone.forward(g, x, bound)?;
        let p = g.gap(f)?;
        self.fc.forward(g, p, "pretrain.fc", true, bound)
    }
}

impl<T: Real> Parameters<T> for PretrainNet<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.backbone.visit(f);
        self.fc.visit("pretrain.fc", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.backbone.visit_mut(f);
        self.fc.visit_mut("pretrain.fc", f);
    }
}
