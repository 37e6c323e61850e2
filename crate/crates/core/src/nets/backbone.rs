use super::{check_batch, Bindings, Conv, Parameters};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Graph, Real, Tensor, Var};

/// Shared feature extractor: conv-relu x2, pool, conv-relu x2, pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T> {
    pub convs: [Conv<T>; 4],
    pub frozen: bool,
}

impl<T: Real> Backbone<T> {
    pub const WIDTHS: [usize; 4] = [16, 32, 64, 64];
    pub const IN_CHANNELS: usize = 3;
    pub const STRIDE: usize = 4;

    pub fn new(rng: &mut Rng) -> Self {
        let [a, b, c, d] = Self::WIDTHS;
        Backbone {
            convs: [
                Conv::kaiming(a, Self::IN_CHANNELS, 3, rng),
                Conv::kaiming(b, a, 3, rng),
                Conv::kaiming(c, b, 3, rng),
                Conv::kaiming(d, c, 3, rng),
            ],
            frozen: false,
        }
    }

    pub fn out_channels(&self) -> usize {
        Self::WIDTHS[3]
    }

    /// `[N, 3, H, W]` to `[N, 64, H/4, W/4]`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, bound: &mut Bindings) -> Result<Var> {
        check_batch(g.shape(x), Self::IN_CHANNELS)?;
        let trainable = !self.frozen;
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(g, h, &format!("backbone.conv{}", i + 1), trainable, bound)?;
            h = g.relu(h)?;
            if i == 1 || i == 3 {
                h = g.maxpool2d(h, 2, 2)?;
            }
        }
        Ok(h)
    }
}

impl<T: Real> Parameters<T> for Backbone<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&format!("backbone.conv{}", i + 1), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&format!("backbone.conv{}", i + 1), f);
        }
    }
}
