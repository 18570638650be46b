//! Fast gradient sign perturbations of the source against the l1
//! restoration loss.

use rand::Rng;

use super::grid::{mean, Restorer};
use super::ssim::batch_ssim;
use crate::data::{corrupt_batch, to_image_space, to_model_space, CorruptionSpec, ImageDataset};
use crate::error::{Error, Result};
use crate::losses::content_loss;
use crate::rng::{seeded, streams};
use crate::tensor::{no_grad, Tensor};

pub const DEFAULT_EPSILON: f64 = 0.01;
const ATTACK_BATCH: usize = 64;

#[derive(Clone, Debug)]
pub struct Attack {
    pub s_adv: Tensor,
    /// `epsilon * sign(grad)`
    pub eta: Tensor,
}

/// `s + epsilon * sign(d l1(G(s), y) / d s)`, everything in model space.
pub fn fgsm_attack(model: &impl Restorer, s: &Tensor, y: &Tensor, epsilon: f64) -> Result<Attack> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain { op: "fgsm_attack", detail: format!("epsilon {epsilon}") });
    }
    let input = s.detach().requires_grad_(true)?;
    let loss = content_loss(&model.forward(&input)?, y)?;
    loss.backward()?;
    let grad = input.grad().unwrap_or_else(|| vec![0.0; s.numel()]);
    let eta = Tensor::new(s.shape(), grad.iter().map(|g| epsilon * sign(*g)).collect())?;
    Ok(Attack { s_adv: s.add(&eta)?.detach(), eta })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `s` plus independent uniform `±epsilon` noise.
pub fn random_sign_perturbation(s: &Tensor, epsilon: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let noise: Vec<f64> = (0..s.numel()).map(|_| if rng.random::<bool>() { epsilon } else { -epsilon }).collect();
    s.add(&Tensor::new(s.shape(), noise)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FgsmReport {
    pub samples: usize,
    pub epsilon: f64,
    pub max_abs_eta: f64,
    pub loss_clean: f64,
    pub loss_fgsm: f64,
    pub loss_random: f64,
    pub ssim_clean: f64,
    pub ssim_fgsm: f64,
    pub ssim_random: f64,
}

impl FgsmReport {
    /// SSIM lost to the attack.
    pub fn degradation(&self) -> f64 {
        self.ssim_clean - self.ssim_fgsm
    }
}

fn scored(model: &impl Restorer, s: &Tensor, y_img: &Tensor, y: &Tensor) -> Result<(f64, Vec<f64>)> {
    let out = model.restore(s)?;
    let loss = no_grad(|| content_loss(&out, y))?.item();
    let img = to_image_space(&out);
    let clamped = Tensor::new(img.shape(), img.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
    Ok((loss, batch_ssim(&clamped, y_img)?))
}

/// Attacks every corrupted image of `dataset` and compares against the
/// unperturbed and randomly perturbed sources. Losses are per-sample
/// means of the model-space l1; SSIM is measured in image space.
pub fn fgsm_eval(
    model: &impl Restorer,
    dataset: &ImageDataset,
    corruption: &CorruptionSpec,
    epsilon: f64,
) -> Result<FgsmReport> {
    if dataset.is_empty() {
        return Err(Error::contract("FGSM evaluation needs a non-empty dataset"));
    }
    let mut mask_rng = seeded(corruption.seed, streams::EVAL);
    let mut noise_rng = seeded(corruption.seed, streams::ATTACK);
    let mut max_abs_eta: f64 = 0.0;
    let (mut clean_l, mut adv_l, mut rand_l) = (0.0, 0.0, 0.0);
    let (mut clean_s, mut adv_s, mut rand_s) = (vec![], vec![], vec![]);
    for start in (0..dataset.len()).step_by(ATTACK_BATCH) {
        let idx: Vec<usize> = (start..(start + ATTACK_BATCH).min(dataset.len())).collect();
        let weight = idx.len() as f64;
        let y_img = dataset.batch(&idx)?;
        let y = to_model_space(&y_img);
        let s = to_model_space(&corrupt_batch(&y_img, corruption.drop_rate, corruption.black_rate, &mut mask_rng)?);
        let attack = fgsm_attack(model, &s, &y, epsilon)?;
        max_abs_eta = attack.eta.data().iter().fold(max_abs_eta, |m, v| m.max(v.abs()));
        let random = random_sign_perturbation(&s, epsilon, &mut noise_rng)?;
        for (input, loss, ssims) in [
            (&s, &mut clean_l, &mut clean_s),
            (&attack.s_adv, &mut adv_l, &mut adv_s),
            (&random, &mut rand_l, &mut rand_s),
        ] {
            let (l, v) = scored(model, input, &y_img, &y)?;
            *loss += l * weight;
            ssims.extend(v);
        }
    }
    let n = dataset.len() as f64;
    Ok(FgsmReport {
        samples: dataset.len(),
        epsilon,
        max_abs_eta,
        loss_clean: clean_l / n,
        loss_fgsm: adv_l / n,
        loss_random: rand_l / n,
        ssim_clean: mean(&clean_s),
        ssim_fgsm: mean(&adv_s),
        ssim_random: mean(&rand_s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_the_source_alone() {
        let s = Tensor::from_slice(&[1, 3], &[0.2, -0.4, 0.9]).unwrap();
        let y = Tensor::zeros(&[1, 3]);
        let constant = |s: &Tensor| Ok(s.mul_scalar(0.0));
        let a = fgsm_attack(&constant, &s, &y, 0.01).unwrap();
        assert_eq!(a.s_adv.to_vec(), s.to_vec());
        assert!(a.eta.to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_generator_moves_away_from_the_target() {
        let s = Tensor::from_slice(&[2, 2], &[0.5, 0.3, 0.1, 0.9]).unwrap();
        let y = Tensor::from_slice(&[2, 2], &[0.0, 0.2, -0.5, 0.1]).unwrap();
        let identity = |s: &Tensor| Ok(s.clone());
        let a = fgsm_attack(&identity, &s, &y, 0.01).unwrap();
        assert_eq!(a.eta.to_vec(), vec![0.01; 4]);
    }

    #[test]
    fn epsilon_must_be_positive() {
        let s = Tensor::zeros(&[1, 2]);
        let identity = |s: &Tensor| Ok(s.clone());
        assert!(fgsm_attack(&identity, &s, &s, 0.0).is_err());
    }

    #[test]
    fn attack_beats_random_noise_on_a_nonlinear_map() {
        let mut rng = seeded(1, 0);
        let w = Tensor::randn(&[6, 6], 0.5, &mut rng);
        let model = move |s: &Tensor| s.matmul(&w)?.tanh().matmul(&w);
        let s = Tensor::randn(&[128, 6], 0.5, &mut rng);
        let y = Tensor::randn(&[128, 6], 0.5, &mut rng);
        let a = fgsm_attack(&model, &s, &y, 0.01).unwrap();
        let r = random_sign_perturbation(&s, 0.01, &mut rng).unwrap();
        let loss = |x: &Tensor| content_loss(&model(x).unwrap(), &y).unwrap().item();
        assert!(loss(&a.s_adv) >= loss(&r));
        assert!(a.eta.to_vec().iter().all(|v| v.abs() <= 0.01));
    }
}
