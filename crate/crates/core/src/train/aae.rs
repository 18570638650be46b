use serde::{Deserialize, Serialize};

use super::{sample_indices, set_trainable, zero_grads, Adam, TrainConfig};
use crate::data::{to_model_space, ImageDataset};
use crate::error::{Error, Result};
use crate::losses::{adv_loss_d, adv_loss_g, content_loss};
use crate::models::{Aae, CODE_DISCRIMINATOR};
use crate::nn::{NetworkSpec, ParameterStore};
use crate::rng::{seeded, streams, LabRng};
use crate::tensor::{no_grad, BatchNormMode, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AaeMetrics {
    pub step: usize,
    pub code_d_loss: f64,
    pub reconstruction: f64,
    pub prior_match: f64,
}

/// Trains an adversarial autoencoder on clean target images. The
/// reconstruction term is weighted by `lambda_ae`; the code discriminator
/// separates encoder codes from standard normal draws.
pub struct AaeTrainer {
    pub config: TrainConfig,
    pub store: ParameterStore,
    pub model: Aae,
    ae_params: Vec<(String, Tensor)>,
    code_params: Vec<(String, Tensor)>,
    ae_opt: Adam,
    code_opt: Adam,
    data: ImageDataset,
    batch_rng: LabRng,
    prior_rng: LabRng,
    steps: usize,
}

impl AaeTrainer {
    pub fn new(config: TrainConfig, spec: &NetworkSpec, data: ImageDataset) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::contract("autoencoder training needs at least one image"));
        }
        let mut store = ParameterStore::new();
        let model = Aae::build(spec, &data.image_shape(), &mut store, config.seed)?;
        let code_params = store.parameters_under(CODE_DISCRIMINATOR);
        let ids: Vec<u64> = code_params.iter().map(|(_, t)| t.id()).collect();
        let ae_params = store.parameters().into_iter().filter(|(_, t)| !ids.contains(&t.id())).collect();
        let adam = config.adam();
        Ok(Self {
            batch_rng: seeded(config.seed, streams::BATCH),
            prior_rng: seeded(config.seed, streams::PRIOR),
            config,
            store,
            model,
            ae_params,
            code_params,
            ae_opt: Adam::new(adam),
            code_opt: Adam::new(adam),
            data,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&mut self) -> Result<AaeMetrics> {
        let idx = sample_indices(&mut self.batch_rng, self.data.len(), self.config.batch_size);
        let y = to_model_space(&self.data.batch(&idx)?);
        self.train_step(&y)
    }

    pub fn train_step(&mut self, y: &Tensor) -> Result<AaeMetrics> {
        let mode = BatchNormMode::Train;
        let (out, code) = self.model.forward(y, mode)?;

        zero_grads(&self.code_params);
        let prior = Tensor::randn(code.shape(), 1.0, &mut self.prior_rng);
        let (real, _) = self.model.code_disc.forward_with_skips(&prior, mode)?;
        let (fake, _) = self.model.code_disc.forward_with_skips(&code.detach(), mode)?;
        let d_loss = adv_loss_d(&real, &fake)?;
        d_loss.backward()?;
        self.code_opt.step(&self.code_params, self.config.grad_clip)?;

        set_trainable(&self.code_params, false)?;
        let result = (|| {
            zero_grads(&self.ae_params);
            let recon = content_loss(&out, y)?;
            let prior_match = adv_loss_g(&self.model.code_disc.forward(&code, mode)?);
            let lambda = self.config.weights().lambda_ae;
            let total = recon.mul_scalar(lambda).add(&prior_match)?;
            if !total.is_finite() {
                return Err(Error::NonFinite { what: "autoencoder loss".into() });
            }
            total.backward()?;
            self.ae_opt.step(&self.ae_params, self.config.grad_clip)?;
            Ok((recon.item(), prior_match.item()))
        })();
        set_trainable(&self.code_params, true)?;
        let (reconstruction, prior_match) = result?;
        self.steps += 1;
        Ok(AaeMetrics { step: self.steps, code_d_loss: d_loss.item(), reconstruction, prior_match })
    }

    pub fn run(&mut self, mut on_step: impl FnMut(&AaeMetrics)) -> Result<()> {
        while self.steps < self.config.iterations {
            let m = self.step()?;
            on_step(&m);
        }
        Ok(())
    }

    /// Eval-mode reconstruction of model-space images.
    pub fn reconstruct(&self, y: &Tensor) -> Result<Tensor> {
        no_grad(|| self.model.autoencoder.forward(y, BatchNormMode::Eval))
    }
}
