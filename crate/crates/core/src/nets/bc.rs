use super::{Backbone, Bindings, Linear, Parameters};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Background-vs-target classifier on a frozen backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct BcNet<T> {
    pub backbone: Backbone<T>,
    pub fc: Linear<T>,
}

impl<T: Real> BcNet<T> {
    /// Wraps `backbone` (which becomes frozen) with a freshly initialized head.
    pub fn new(mut backbone: Backbone<T>, rng: &mut Rng) -> Self {
        backbone.frozen = true;
        let fc = Linear::kaiming(backbone.out_channels(), 1, rng);
        BcNet { backbone, fc }
    }

    /// Pooled backbone features `[N, 64]`.
    pub fn features(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut unused = Bindings::default();
        let f = self.backbone.forward(g, x, &mut unused)?;
        g.gap(f)
    }

    /// Head on pooled features: `[N, 64]` to logits `[N]`.
    pub fn head(&self, g: &mut Graph<T>, features: Var, bound: &mut Bindings) -> Result<Var> {
        let n = g.shape(features)[0];
        let z = self.fc.forward(g, features, "bc.fc", true, bound)?;
        g.reshape(z, vec![n])
    }

    /// One pre-sigmoid logit per image.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, bound: &mut Bindings) -> Result<Var> {
        let f = self.features(g, x)?;
        self.head(g, f, bound)
    }
}

impl<T: Real> Parameters<T> for BcNet<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.backbone.visit(f);
        self.fc.visit("bc.fc", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.backbone.visit_mut(f);
        self.fc.visit_mut("bc.fc", f);
    }
}
