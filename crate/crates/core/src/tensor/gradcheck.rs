//! Central finite-difference checks of graph gradients.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Agreement between analytic and numeric gradients of one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradError {
    /// Largest elementwise `|a - n| / max(1, |n|)`.
    pub relative: f64,
    /// Largest elementwise `|a - n|`.
    pub max_abs: f64,
}

/// Differentiates `L = sum(build(inputs) * weights)` with respect to every
/// input, analytically through the graph and by central differences with
/// step `h`, and reports the discrepancy per input.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    weights: &[f64],
    h: f64,
    build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<Vec<GradError>> {
    let eval = |vals: &[Tensor<f64>], with_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals
            .iter()
            .map(|t| {
                if with_grad {
                    g.variable(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        let out = build(&mut g, &vars)?;
        let value: f64 = g.value(out).data().iter().zip(weights).map(|(a, b)| a * b).sum();
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let root = g.scalar_fn(out, value, weights.to_vec())?;
        g.backward(root)?;
        let grads = vars
            .iter()
            .map(|&v| g.grad(v).map_or_else(|| vec![0.0; g.value(v).numel()], <[f64]>::to_vec))
            .collect();
        Ok((value, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut report = Vec::with_capacity(inputs.len());
    for (i, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            *n = (eval(&plus, false)?.0 - eval(&minus, false)?.0) / (2.0 * h);
        }
        report.push(GradError {
            relative: a
                .iter()
                .zip(&numeric)
                .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
                .fold(0.0, f64::max),
            max_abs: a.iter().zip(&numeric).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
        });
    }
    Ok(report)
}
