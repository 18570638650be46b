use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-5, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Bias-corrected Adam over named tensors. Parameters without a gradient
/// in a step are left untouched and keep their moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    state: BTreeMap<String, Moments>,
}

/// One Adam update of `theta` in place, for step `t >= 1`.
pub fn adam_update(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, c: &AdamConfig) {
    let bc1 = 1.0 - c.beta1.powi(t as i32);
    let bc2 = 1.0 - c.beta2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
    }
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, state: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. With `clip`, gradients are rescaled so their
    /// global l2 norm is at most the given value. A non-finite gradient
    /// aborts before any parameter is modified.
    pub fn step(&mut self, params: &[(String, Tensor)], clip: Option<f64>) -> Result<()> {
        let mut grads: Vec<(usize, Vec<f64>)> = Vec::with_capacity(params.len());
        for (i, (name, t)) in params.iter().enumerate() {
            if let Some(g) = t.grad() {
                if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { what: format!("gradient of `{name}` at element {bad}") });
                }
                grads.push((i, g));
            }
        }
        if let Some(max_norm) = clip {
            let norm = grads.iter().flat_map(|(_, g)| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
            if norm > max_norm {
                let scale = max_norm / norm;
                grads.iter_mut().for_each(|(_, g)| g.iter_mut().for_each(|v| *v *= scale));
            }
        }
        self.step += 1;
        for (i, g) in grads {
            let (name, t) = &params[i];
            let st = self
                .state
                .entry(name.clone())
                .or_insert_with(|| Moments { m: vec![0.0; g.len()], v: vec![0.0; g.len()] });
            adam_update(&mut t.data_mut(), &g, &mut st.m, &mut st.v, self.step, &self.config);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let c = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let (mut theta, mut m, mut v) = (vec![1.0], vec![0.0], vec![0.0]);
        adam_update(&mut theta, &[1.0], &mut m, &mut v, 1, &c);
        assert!((theta[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let c = AdamConfig::default();
        let (mut theta, mut m, mut v) = (vec![0.3, -0.2], vec![0.0; 2], vec![0.0; 2]);
        adam_update(&mut theta, &[0.0, 0.0], &mut m, &mut v, 1, &c);
        assert_eq!(theta, vec![0.3, -0.2]);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let w = Tensor::from_slice(&[2], &[1.0, 2.0]).unwrap().requires_grad_(true).unwrap();
        let x = Tensor::from_slice(&[1], &[f64::NAN]).unwrap();
        w.mul(&x).unwrap().sum().backward().unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        let err = adam.step(&[("enc_G.0.weight".into(), w.clone())], None).unwrap_err();
        assert!(err.to_string().contains("enc_G.0.weight"));
        assert_eq!(w.to_vec(), vec![1.0, 2.0]);
    }
}
