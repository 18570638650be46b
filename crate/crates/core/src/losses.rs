//! Adversarial, content, feature-matching, autoencoder, latent and
//! decorrelation losses, plus the weighted generator objective.
//!
//! Every l1 term is a mean over elements so the weights do not depend on
//! resolution or batch size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_pi: f64,
    pub lambda_ae: f64,
    pub lambda_l: f64,
    #[serde(default)]
    pub lambda_decov: f64,
}

impl LossWeights {
    /// Content and feature-matching terms only.
    pub fn cgan() -> Self {
        Self { lambda_c: 100.0, lambda_pi: 1.0, lambda_ae: 0.0, lambda_l: 0.0, lambda_decov: 0.0 }
    }

    pub fn rocgan() -> Self {
        Self { lambda_ae: 100.0, lambda_l: 25.0, ..Self::cgan() }
    }

    pub fn rocgan_skip() -> Self {
        Self { lambda_decov: 1.0, ..Self::rocgan() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_c", self.lambda_c),
            ("lambda_pi", self.lambda_pi),
            ("lambda_ae", self.lambda_ae),
            ("lambda_l", self.lambda_l),
            ("lambda_decov", self.lambda_decov),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::contract(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Whether the autoencoder pathway contributes to the objective.
    pub fn uses_ae_pathway(&self) -> bool {
        self.lambda_ae > 0.0 || self.lambda_l > 0.0
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `-mean log sigmoid(real) - mean log(1 - sigmoid(fake))`.
pub fn adv_loss_d(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    real_logits.neg().softplus().mean().add(&fake_logits.softplus().mean())
}

/// Non-saturating generator loss, `-mean log sigmoid(fake)`.
pub fn adv_loss_g(fake_logits: &Tensor) -> Tensor {
    fake_logits.neg().softplus().mean()
}

/// Minimax generator loss, `mean log(1 - sigmoid(fake))`.
pub fn adv_loss_g_minimax(fake_logits: &Tensor) -> Tensor {
    fake_logits.softplus().mean().neg()
}

/// Mean absolute error between a generator output and its target.
pub fn content_loss(g_out: &Tensor, y: &Tensor) -> Result<Tensor> {
    same_shape("content_loss", g_out, y)?;
    Ok(g_out.sub(y)?.abs().mean())
}

/// Mean absolute distance between discriminator features; the target
/// branch is detached.
pub fn feature_matching_loss(pi_g: &Tensor, pi_y: &Tensor) -> Result<Tensor> {
    same_shape("feature_matching_loss", pi_g, pi_y)?;
    Ok(pi_g.sub(&pi_y.detach())?.abs().mean())
}

pub fn ae_loss(y: &Tensor, g_ae_out: &Tensor) -> Result<Tensor> {
    same_shape("ae_loss", g_ae_out, y)?;
    Ok(g_ae_out.sub(y)?.abs().mean())
}

/// Mean absolute distance between the two encoders' outputs; gradients
/// reach both.
pub fn latent_loss(e_g: &Tensor, e_ae: &Tensor) -> Result<Tensor> {
    same_shape("latent_loss", e_g, e_ae)?;
    Ok(e_g.sub(e_ae)?.abs().mean())
}

/// Half the squared Frobenius norm of the off-diagonal part of the batch
/// covariance (1/N normalization) of `h`, flattened to `[N, d]`.
pub fn decov_loss(h: &Tensor) -> Result<Tensor> {
    let n = *h.shape().first().ok_or_else(|| Error::shape("decov_loss", "scalar input"))?;
    if n < 2 {
        return Err(Error::contract(format!("decov_loss needs at least 2 samples, got {n}")));
    }
    let flat = if h.ndim() == 2 { h.clone() } else { h.flatten_batch()? };
    let d = flat.shape()[1];
    let centering: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 } - 1.0 / n as f64).collect();
    let centered = Tensor::new(&[n, n], centering)?.matmul(&flat)?;
    let cov = centered.t()?.matmul(&centered)?.mul_scalar(1.0 / n as f64);
    let off_diag: Vec<f64> = (0..d * d).map(|k| if k / d == k % d { 0.0 } else { 1.0 }).collect();
    Ok(cov.mul(&Tensor::new(&[d, d], off_diag)?)?.square().sum().mul_scalar(0.5))
}

/// Generator loss terms of one step. Absent terms are not part of the
/// objective.
#[derive(Clone, Default)]
pub struct GeneratorTerms {
    pub adv: Option<Tensor>,
    pub content: Option<Tensor>,
    pub feature: Option<Tensor>,
    pub ae: Option<Tensor>,
    pub latent: Option<Tensor>,
    pub decov: Option<Tensor>,
}

/// Scalar values of [`GeneratorTerms`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub adv: Option<f64>,
    pub content: Option<f64>,
    pub feature: Option<f64>,
    pub ae: Option<f64>,
    pub latent: Option<f64>,
    pub decov: Option<f64>,
}

impl GeneratorTerms {
    pub fn values(&self) -> TermValues {
        let v = |t: &Option<Tensor>| t.as_ref().map(Tensor::item);
        TermValues {
            adv: v(&self.adv),
            content: v(&self.content),
            feature: v(&self.feature),
            ae: v(&self.ae),
            latent: v(&self.latent),
            decov: v(&self.decov),
        }
    }

    fn weighted(&self, w: &LossWeights) -> [(Option<&Tensor>, f64); 6] {
        [
            (self.adv.as_ref(), 1.0),
            (self.content.as_ref(), w.lambda_c),
            (self.feature.as_ref(), w.lambda_pi),
            (self.ae.as_ref(), w.lambda_ae),
            (self.latent.as_ref(), w.lambda_l),
            (self.decov.as_ref(), w.lambda_decov),
        ]
    }
}

impl TermValues {
    /// The same weighted sum as [`total_loss_rocgan`], in the same order,
    /// on plain floats.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        let terms = [
            (self.adv, 1.0),
            (self.content, w.lambda_c),
            (self.feature, w.lambda_pi),
            (self.ae, w.lambda_ae),
            (self.latent, w.lambda_l),
            (self.decov, w.lambda_decov),
        ];
        let mut total = 0.0;
        for (v, weight) in terms {
            if let Some(v) = v {
                if weight != 0.0 {
                    total += if weight == 1.0 { v } else { v * weight };
                }
            }
        }
        total
    }
}

/// `adv + λc·content + λπ·feature + λae·ae + λl·latent + λdecov·decov`.
/// Terms with zero weight are left out of the graph, so zeroing the
/// autoencoder weights yields the plain conditional GAN objective exactly.
pub fn total_loss_rocgan(terms: &GeneratorTerms, w: &LossWeights) -> Result<Tensor> {
    let mut total = Tensor::scalar(0.0);
    for (t, weight) in terms.weighted(w) {
        if let Some(t) = t {
            if !t.is_finite() {
                return Err(Error::NonFinite { what: "generator loss term".into() });
            }
            if weight != 0.0 {
                let scaled = if weight == 1.0 { t.clone() } else { t.mul_scalar(weight) };
                total = total.add(&scaled)?;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, DEFAULT_STEP};
    use crate::rng::seeded;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_slice(shape, v).unwrap()
    }

    #[test]
    fn adversarial_values_at_zero_logits() {
        let z = Tensor::zeros(&[4]);
        let ln2 = std::f64::consts::LN_2;
        assert!((adv_loss_d(&z, &z).unwrap().item() - 2.0 * ln2).abs() < 1e-12);
        assert!((adv_loss_g(&z).item() - ln2).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_has_vanishing_loss() {
        let real = Tensor::full(&[3], 40.0);
        let fake = Tensor::full(&[3], -40.0);
        assert!(adv_loss_d(&real, &fake).unwrap().item() < 1e-15);
    }

    #[test]
    fn generator_gradient_at_zero_logit() {
        let fake = Tensor::zeros(&[4]).requires_grad_(true).unwrap();
        adv_loss_g(&fake).backward().unwrap();
        for g in fake.grad().unwrap() {
            assert!((g - (-0.5 / 4.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn l1_terms() {
        let g = t(&[2], &[1.0, 2.0]);
        let y = Tensor::zeros(&[2]);
        assert_eq!(content_loss(&g, &y).unwrap().item(), 1.5);
        assert_eq!(content_loss(&g, &g).unwrap().item(), 0.0);
        assert_eq!(ae_loss(&t(&[2], &[1.0, 1.0]), &y).unwrap().item(), 1.0);
        assert_eq!(latent_loss(&g, &y).unwrap().item(), 1.5);
        assert_eq!(latent_loss(&y, &g).unwrap().item(), 1.5);
        assert_eq!(feature_matching_loss(&t(&[1], &[2.0]), &t(&[1], &[-1.0])).unwrap().item(), 3.0);
        assert!(content_loss(&g, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn content_subgradient_at_equality_is_zero() {
        let g = t(&[2], &[0.5, -0.5]).requires_grad_(true).unwrap();
        content_loss(&g, &t(&[2], &[0.5, -0.5])).unwrap().backward().unwrap();
        assert_eq!(g.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn feature_target_is_detached() {
        let pg = t(&[2], &[1.0, 2.0]).requires_grad_(true).unwrap();
        let py = t(&[2], &[0.0, 0.0]).requires_grad_(true).unwrap();
        feature_matching_loss(&pg, &py).unwrap().backward().unwrap();
        assert!(py.grad().is_none_or(|g| g.iter().all(|&v| v == 0.0)));
        assert!(pg.grad().is_some());
    }

    #[test]
    fn decov_reference_values() {
        let h = t(&[2, 2], &[1.0, 1.0, -1.0, -1.0]);
        assert!((decov_loss(&h).unwrap().item() - 1.0).abs() < 1e-12);
        let diag = t(&[4, 2], &[2.0, 0.0, -2.0, 0.0, 0.0, 3.0, 0.0, -3.0]);
        assert!(decov_loss(&diag).unwrap().item().abs() < 1e-12);
        assert!(matches!(decov_loss(&Tensor::zeros(&[1, 3])), Err(Error::Contract(_))));
    }

    #[test]
    fn total_loss_weights() {
        let one = || Some(Tensor::scalar(1.0));
        let terms =
            GeneratorTerms { adv: one(), content: one(), feature: one(), ae: one(), latent: one(), decov: None };
        let total = total_loss_rocgan(&terms, &LossWeights::rocgan()).unwrap();
        assert_eq!(total.item(), 227.0);
        assert_eq!(terms.values().weighted_sum(&LossWeights::rocgan()), 227.0);
        assert_eq!(total_loss_rocgan(&GeneratorTerms::default(), &LossWeights::rocgan()).unwrap().item(), 0.0);
    }

    #[test]
    fn zero_weights_reduce_to_baseline_objective() {
        let mut rng = seeded(11, 0);
        let vals: Vec<f64> = (0..6).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let mk = |v: f64| Some(Tensor::scalar(v));
        let full = GeneratorTerms {
            adv: mk(vals[0]),
            content: mk(vals[1]),
            feature: mk(vals[2]),
            ae: mk(vals[3]),
            latent: mk(vals[4]),
            decov: mk(vals[5]),
        };
        let base = GeneratorTerms { ae: None, latent: None, decov: None, ..full.clone() };
        let zeroed = LossWeights { lambda_ae: 0.0, lambda_l: 0.0, lambda_decov: 0.0, ..LossWeights::rocgan() };
        let a = total_loss_rocgan(&full, &zeroed).unwrap().item();
        let b = total_loss_rocgan(&base, &LossWeights::cgan()).unwrap().item();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = seeded(5, 1);
        let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let check =
            check_gradients(&|v: &[Tensor]| adv_loss_d(&v[0], &v[1]), &[a.clone(), b.clone()], DEFAULT_STEP).unwrap();
        assert!(check.max_relative_error() < 1e-5, "{:?}", check.relative_errors);
        let check =
            check_gradients(&|v: &[Tensor]| latent_loss(&v[0], &v[1]), &[a.clone(), b.clone()], DEFAULT_STEP).unwrap();
        assert!(check.max_relative_error() < 1e-5);
        let check = check_gradients(&|v: &[Tensor]| decov_loss(&v[0]), std::slice::from_ref(&a), DEFAULT_STEP).unwrap();
        assert!(check.max_relative_error() < 1e-5, "{:?}", check.relative_errors);
        let check = check_gradients(&|v: &[Tensor]| Ok(adv_loss_g(&v[0])), &[b], DEFAULT_STEP).unwrap();
        assert!(check.max_relative_error() < 1e-5);
    }
}
