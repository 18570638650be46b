//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the forward function, so it is
//! independent of every backward rule it is used to check.

use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    /// Per-input `||analytic - numeric|| / max(||analytic||, ||numeric||)`.
    pub relative_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Central differences of the scalar `f` with respect to every element of
/// every input.
pub fn numeric_gradient<F>(f: &F, inputs: &[Tensor], step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for input in inputs {
        let n = input.numel();
        let mut g = vec![0.0; n];
        for (i, gi) in g.iter_mut().enumerate() {
            let original = input.data()[i];
            input.data_mut()[i] = original + step;
            let plus = no_grad(|| f(inputs))?.item();
            input.data_mut()[i] = original - step;
            let minus = no_grad(|| f(inputs))?.item();
            input.data_mut()[i] = original;
            *gi = (plus - minus) / (2.0 * step);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Compares the backward pass of `f` against central differences. Inputs
/// are marked as requiring gradients for the analytic pass.
pub fn check_gradients<F>(f: &F, inputs: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    for t in inputs {
        t.set_requires_grad(true)?;
        t.zero_grad();
    }
    f(inputs)?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs.iter().map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()])).collect();
    let numeric = numeric_gradient(f, inputs, step)?;
    let relative_errors = analytic.iter().zip(&numeric).map(|(a, n)| relative_error(a, n)).collect();
    Ok(GradCheck { analytic, numeric, relative_errors })
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(1e-8)
}
