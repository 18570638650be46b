//! Optimizer, the alternating discriminator/generator loop, and the
//! adversarial autoencoder reference trainer.

mod aae;
mod adam;
mod task;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use aae::{AaeMetrics, AaeTrainer};
pub use adam::{adam_update, Adam, AdamConfig};
pub use task::{image_config, ImageTask};

use crate::data::{corrupt_batch, to_model_space, CorruptionSpec, ImageDataset};
use crate::error::{Error, Result};
use crate::losses::{
    adv_loss_d, adv_loss_g, adv_loss_g_minimax, ae_loss, content_loss, decov_loss, feature_matching_loss, latent_loss,
    total_loss_rocgan, GeneratorTerms, LossWeights, TermValues,
};
use crate::models::{Discriminator, Generator, DISCRIMINATOR};
use crate::nn::{NetworkSpec, ParameterStore};
use crate::rng::{seeded, streams, LabRng};
use crate::tensor::{no_grad, BatchNormMode, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cgan,
    Rocgan,
    RocganSkip,
    Aae,
}

impl Mode {
    pub fn two_pathway(self) -> bool {
        matches!(self, Mode::Rocgan | Mode::RocganSkip)
    }

    pub fn default_weights(self) -> LossWeights {
        match self {
            Mode::Cgan => LossWeights::cgan(),
            Mode::Rocgan | Mode::Aae => LossWeights::rocgan(),
            Mode::RocganSkip => LossWeights::rocgan_skip(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSupervised {
    pub labelled_count: usize,
    pub unlabelled_count: usize,
    /// Unlabelled targets added to each autoencoder batch; defaults to the
    /// batch size.
    #[serde(default)]
    pub unlabelled_batch: Option<usize>,
}

fn default_lr() -> f64 {
    2e-5
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    pub batch_size: usize,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    pub mode: Mode,
    /// Defaults to the mode's standard weights.
    #[serde(default)]
    pub loss_weights: Option<LossWeights>,
    #[serde(default)]
    pub semi_supervised: Option<SemiSupervised>,
    /// Training-time corruption of the source images.
    pub corruption: CorruptionSpec,
    /// Share the decoder between the pathways. Turning this off is only
    /// meant for reduction checks.
    #[serde(default = "yes")]
    pub tie_decoder: bool,
    #[serde(default)]
    pub minimax_generator: bool,
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn new(mode: Mode, batch_size: usize, iterations: usize, seed: u64) -> Self {
        Self {
            learning_rate: default_lr(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
            batch_size,
            iterations,
            seed,
            mode,
            loss_weights: None,
            semi_supervised: None,
            corruption: CorruptionSpec::new(0.25, 0.0, 0),
            tie_decoder: true,
            minimax_generator: false,
            grad_clip: None,
        }
    }

    pub fn weights(&self) -> LossWeights {
        self.loss_weights.unwrap_or_else(|| self.mode.default_weights())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::contract(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size < 2 {
            return Err(Error::contract(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return Err(Error::contract("adam betas must lie in [0, 1) and eps must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::contract(format!("grad_clip must be positive, got {c}")));
            }
        }
        self.weights().validate()?;
        self.corruption.validate()
    }
}

/// One training batch in model space `[-1, 1]`.
#[derive(Clone)]
pub struct Batch {
    pub s: Tensor,
    pub y: Tensor,
    /// Extra target-domain images for the autoencoder pathway.
    pub unlabelled: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub d_loss: f64,
    pub g_total: f64,
    pub terms: TermValues,
    pub labelled: usize,
    pub unlabelled: usize,
}

fn check_finite(what: &str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what: what.to_string() })
    }
}

fn set_trainable(params: &[(String, Tensor)], flag: bool) -> Result<()> {
    params.iter().try_for_each(|(_, t)| t.set_requires_grad(flag))
}

fn zero_grads(params: &[(String, Tensor)]) {
    params.iter().for_each(|(_, t)| t.zero_grad());
}

/// Draws `k` indices uniformly with replacement.
pub fn sample_indices(rng: &mut LabRng, n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|_| rng.random_range(0..n)).collect()
}

/// Alternating trainer for the conditional GAN and both two-pathway
/// variants.
pub struct GanTrainer {
    pub config: TrainConfig,
    pub store: ParameterStore,
    pub generator: Generator,
    pub discriminator: Discriminator,
    g_params: Vec<(String, Tensor)>,
    d_params: Vec<(String, Tensor)>,
    g_opt: Adam,
    d_opt: Adam,
    labelled: ImageDataset,
    unlabelled: Option<ImageDataset>,
    batch_rng: LabRng,
    corruption_rng: LabRng,
    steps: usize,
}

impl GanTrainer {
    /// `labelled` supplies the (corrupted source, clean target) pairs.
    /// `unlabelled` holds extra target images seen only by the autoencoder
    /// pathway.
    pub fn new(
        config: TrainConfig,
        gen_spec: &NetworkSpec,
        disc_spec: &NetworkSpec,
        labelled: ImageDataset,
        unlabelled: Option<ImageDataset>,
    ) -> Result<Self> {
        config.validate()?;
        if labelled.is_empty() {
            return Err(Error::contract("training needs at least one labelled pair"));
        }
        let shape = labelled.image_shape();
        let mut store = ParameterStore::new();
        let generator = match config.mode {
            Mode::Cgan => Generator::build_cgan(gen_spec, &shape, &mut store, config.seed)?,
            Mode::Rocgan | Mode::RocganSkip if config.tie_decoder => {
                Generator::build_rocgan(gen_spec, &shape, &shape, &mut store, config.seed)?
            }
            Mode::Rocgan | Mode::RocganSkip => {
                let reg = Generator::build_cgan(gen_spec, &shape, &mut store, config.seed)?.reg;
                let ae = crate::nn::Network::build(
                    gen_spec,
                    &shape,
                    &mut store,
                    &crate::nn::Naming::split(crate::models::AE_ENCODER, crate::models::AE_DECODER),
                    config.seed,
                )?;
                Generator { reg, ae: Some(ae) }
            }
            Mode::Aae => return Err(Error::contract("use AaeTrainer for the aae mode")),
        };
        let discriminator = Discriminator::build(disc_spec, &shape, &shape, &mut store, config.seed)?;
        let d_params = store.parameters_under(DISCRIMINATOR);
        let d_ids: Vec<u64> = d_params.iter().map(|(_, t)| t.id()).collect();
        let g_params: Vec<(String, Tensor)> =
            store.parameters().into_iter().filter(|(_, t)| !d_ids.contains(&t.id())).collect();
        let adam = config.adam();
        let unlabelled = unlabelled.filter(|u| !u.is_empty());
        Ok(Self {
            batch_rng: seeded(config.seed, streams::BATCH),
            corruption_rng: seeded(config.seed, streams::CORRUPTION),
            config,
            store,
            generator,
            discriminator,
            g_params,
            d_params,
            g_opt: Adam::new(adam),
            d_opt: Adam::new(adam),
            labelled,
            unlabelled,
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn generator_params(&self) -> &[(String, Tensor)] {
        &self.g_params
    }

    /// Samples target indices, then fresh corruption masks, from their own
    /// streams.
    pub fn sample_batch(&mut self) -> Result<Batch> {
        let idx = sample_indices(&mut self.batch_rng, self.labelled.len(), self.config.batch_size);
        let y_img = self.labelled.batch(&idx)?;
        let c = self.config.corruption;
        let s_img = corrupt_batch(&y_img, c.drop_rate, c.black_rate, &mut self.corruption_rng)?;
        let unlabelled = match (&self.unlabelled, &self.config.semi_supervised) {
            (Some(u), semi) => {
                let k = semi.and_then(|s| s.unlabelled_batch).unwrap_or(self.config.batch_size);
                let idx = sample_indices(&mut self.batch_rng, u.len(), k);
                Some(to_model_space(&u.batch(&idx)?))
            }
            _ => None,
        };
        Ok(Batch { s: to_model_space(&s_img), y: to_model_space(&y_img), unlabelled })
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepMetrics> {
        let w = self.config.weights();
        let mode = BatchNormMode::Train;
        let (fake, reg_taps) = self.generator.forward_reg(&batch.s, mode)?;

        zero_grads(&self.d_params);
        let (real_logits, _) = self.discriminator.discriminate(&batch.s, &batch.y, mode)?;
        let (fake_logits, _) = self.discriminator.discriminate(&batch.s, &fake.detach(), mode)?;
        let d_loss = adv_loss_d(&real_logits, &fake_logits)?;
        check_finite("discriminator loss", &d_loss)?;
        d_loss.backward()?;
        self.d_opt.step(&self.d_params, self.config.grad_clip)?;

        set_trainable(&self.d_params, false)?;
        let result = self.generator_update(batch, &fake, &reg_taps, &w);
        set_trainable(&self.d_params, true)?;
        let (g_total, terms, unlabelled) = result?;

        self.steps += 1;
        Ok(StepMetrics {
            step: self.steps,
            d_loss: d_loss.item(),
            g_total,
            terms,
            labelled: batch.y.shape()[0],
            unlabelled,
        })
    }

    fn generator_update(
        &mut self,
        batch: &Batch,
        fake: &Tensor,
        reg_taps: &crate::nn::Taps,
        w: &LossWeights,
    ) -> Result<(f64, TermValues, usize)> {
        let mode = BatchNormMode::Train;
        zero_grads(&self.g_params);
        let (fake_logits, pi_g) = self.discriminator.discriminate(&batch.s, fake, mode)?;
        let mut terms = GeneratorTerms {
            adv: Some(if self.config.minimax_generator {
                adv_loss_g_minimax(&fake_logits)
            } else {
                adv_loss_g(&fake_logits)
            }),
            content: Some(content_loss(fake, &batch.y)?),
            ..Default::default()
        };
        if w.lambda_pi > 0.0 {
            let (_, pi_y) = no_grad(|| self.discriminator.discriminate(&batch.s, &batch.y, mode))?;
            terms.feature = Some(feature_matching_loss(&pi_g, &pi_y)?);
        }
        let mut unlabelled = 0;
        if self.generator.is_two_pathway() && w.uses_ae_pathway() {
            let n = batch.y.shape()[0];
            let ae_input = match &batch.unlabelled {
                Some(u) => {
                    unlabelled = u.shape()[0];
                    batch.y.concat_batch(u)?
                }
                None => batch.y.clone(),
            };
            let (ae_out, ae_taps) = self.generator.forward_ae(&ae_input, mode)?;
            if w.lambda_ae > 0.0 {
                terms.ae = Some(ae_loss(&ae_input, &ae_out)?);
            }
            if w.lambda_l > 0.0 {
                let e_ae = &ae_taps["bottleneck"];
                let e_ae = if unlabelled > 0 { e_ae.slice_batch(0, n)? } else { e_ae.clone() };
                terms.latent = Some(latent_loss(&reg_taps["bottleneck"], &e_ae)?);
            }
        }
        if w.lambda_decov > 0.0 {
            terms.decov = Some(decov_loss(&reg_taps["bottleneck"])?);
        }
        for (name, t) in [
            ("adversarial loss", &terms.adv),
            ("content loss", &terms.content),
            ("feature matching loss", &terms.feature),
            ("autoencoder loss", &terms.ae),
            ("latent loss", &terms.latent),
            ("decov loss", &terms.decov),
        ] {
            if let Some(t) = t {
                check_finite(name, t)?;
            }
        }
        let total = total_loss_rocgan(&terms, w)?;
        total.backward()?;
        self.g_opt.step(&self.g_params, self.config.grad_clip)?;
        Ok((total.item(), terms.values(), unlabelled))
    }

    pub fn step(&mut self) -> Result<StepMetrics> {
        let batch = self.sample_batch()?;
        self.train_step(&batch)
    }

    /// Runs the configured number of iterations, handing every step's
    /// metrics to `on_step`.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepMetrics)) -> Result<()> {
        while self.steps < self.config.iterations {
            let m = self.step()?;
            on_step(&m);
        }
        Ok(())
    }

    /// Regression-pathway output in eval mode, without a graph.
    pub fn restore(&self, s: &Tensor) -> Result<Tensor> {
        no_grad(|| self.generator.reg.forward(s, BatchNormMode::Eval))
    }
}

/// Semi-supervised training: the regression terms see the labelled pairs,
/// the autoencoder loss additionally consumes unlabelled targets.
pub fn train_semi_supervised(
    labelled: ImageDataset,
    unlabelled: ImageDataset,
    config: TrainConfig,
    gen_spec: &NetworkSpec,
    disc_spec: &NetworkSpec,
) -> Result<GanTrainer> {
    if labelled.is_empty() {
        return Err(Error::contract("semi-supervised training needs labelled pairs"));
    }
    let mut trainer = GanTrainer::new(config, gen_spec, disc_spec, labelled, Some(unlabelled))?;
    trainer.run(|_| {})?;
    Ok(trainer)
}
