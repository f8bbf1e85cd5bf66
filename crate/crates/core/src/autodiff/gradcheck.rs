//! Central finite-difference checks for analytic gradients.
//!
//! The numerical side only ever evaluates the forward pass, so it shares no
//! code with the backward rules it checks.

use super::{Graph, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Normwise relative error per input: `max|a − n| / max(max|a|, max|n|)`.
    pub rel_errors: Vec<f64>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn normwise_rel(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a
        .iter()
        .chain(n)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Compares the backward pass of `f` with central differences of step `h`.
///
/// `f` builds a scalar from leaves created for each of `inputs` (all marked
/// `requires_grad`). It must be deterministic: any randomness has to be
/// re-seeded identically on every call.
pub fn check<T, F>(inputs: &[Tensor<T>], h: f64, f: F) -> Result<GradCheck>
where
    T: Real,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<T>]| -> Result<T> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone(), true)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match g.grad(v) {
            Some(gr) => gr.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.len()],
        })
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let step = T::from_f64(h);
    for i in 0..inputs.len() {
        let mut col = Vec::with_capacity(inputs[i].len());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            col.push((plus - minus).as_f64() / (2.0 * h));
        }
        numeric.push(col);
    }
    let rel_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| normwise_rel(a, n))
        .collect();
    Ok(GradCheck {
        rel_errors,
        analytic,
        numeric,
    })
}
