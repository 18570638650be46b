//! The synthetic manifold experiment: a dense regression network against
//! the same network trained as the regression pathway of a two-pathway
//! model whose decoder is shared with an autoencoder of the outputs.

use serde::{Deserialize, Serialize};

use crate::data::manifold::{sample_manifold_with, INPUT_DIM, OUTPUT_DIM};
use crate::error::{Error, Result};
use crate::losses::latent_loss;
use crate::models::{synthetic_spec, Generator, AE_DECODER, AE_ENCODER, REG_DECODER, REG_ENCODER};
use crate::nn::{Naming, Network, ParameterStore, StateDict};
use crate::rng::{seeded, LabRng};
use crate::tensor::{no_grad, BatchNormMode, Tensor};
use crate::train::{Adam, AdamConfig};

const BASELINE_STREAM: u64 = 0x7379_6e00_0000_0001;
const AE_STREAM: u64 = 0x7379_6e00_0000_0002;
const JOINT_STREAM: u64 = 0x7379_6e00_0000_0003;
const VALIDATION_STREAM: u64 = 0x7379_6e00_0000_0004;
const TEST_STREAM: u64 = 0x7379_6e00_0000_0005;

fn default_hidden() -> usize {
    32
}
fn default_batch() -> usize {
    128
}
fn default_max_iterations() -> usize {
    100_000
}
fn default_lr() -> f64 {
    2e-5
}
fn default_patience() -> usize {
    5_000
}
fn default_min_improvement() -> f64 {
    1e-6
}
fn default_eval_every() -> usize {
    250
}
fn default_val_points() -> usize {
    1_024
}
fn default_test_points() -> usize {
    6_400
}
fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Per training phase.
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Stop once validation l2 has not improved by `min_improvement` for
    /// this many iterations.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_min_improvement")]
    pub min_improvement: f64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_val_points")]
    pub val_points: usize,
    #[serde(default = "default_test_points")]
    pub test_points: usize,
    /// Weight of the autoencoder pathway's l2 term in joint training.
    #[serde(default = "default_one")]
    pub lambda_ae: f64,
    /// Weight of the latent l1 term in joint training.
    #[serde(default = "default_one")]
    pub lambda_l: f64,
    #[serde(default = "default_true")]
    pub tie_decoder: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::contract(m));
        if self.hidden == 0
            || self.batch_size < 2
            || self.eval_every == 0
            || self.val_points == 0
            || self.test_points == 0
        {
            return fail(format!(
                "hidden {}, batch {}, eval_every {}, val {}, test {} must be positive (batch >= 2)",
                self.hidden, self.batch_size, self.eval_every, self.val_points, self.test_points
            ));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.lambda_ae >= 0.0 && self.lambda_l >= 0.0) {
            return fail(format!("loss weights {} and {} must be non-negative", self.lambda_ae, self.lambda_l));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, ..AdamConfig::default() }
    }
}

fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(a.sub(b)?.square().mean())
}

/// Which pathways a training phase optimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Phase {
    Baseline,
    Autoencoder,
    Joint { lambda_ae: f64, lambda_l: f64 },
}

/// Networks of the experiment in one store. `ae` is absent for a lone
/// baseline.
pub struct SyntheticModel {
    pub store: ParameterStore,
    pub reg: Option<Network>,
    pub ae: Option<Network>,
}

impl SyntheticModel {
    pub fn baseline(hidden: usize, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new();
        let spec = synthetic_spec(hidden, OUTPUT_DIM);
        let reg = Network::build(&spec, &[INPUT_DIM], &mut store, &Naming::split(REG_ENCODER, REG_DECODER), seed)?;
        Ok(Self { store, reg: Some(reg), ae: None })
    }

    pub fn autoencoder(hidden: usize, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new();
        let spec = synthetic_spec(hidden, OUTPUT_DIM);
        let ae = Network::build(&spec, &[OUTPUT_DIM], &mut store, &Naming::split(AE_ENCODER, AE_DECODER), seed)?;
        Ok(Self { store, reg: None, ae: Some(ae) })
    }

    /// Both pathways; with `tie_decoder` the decoder parameters are one set.
    pub fn two_pathway(hidden: usize, seed: u64, tie_decoder: bool) -> Result<Self> {
        let mut store = ParameterStore::new();
        let spec = synthetic_spec(hidden, OUTPUT_DIM);
        let g = if tie_decoder {
            Generator::build_rocgan(&spec, &[INPUT_DIM], &[OUTPUT_DIM], &mut store, seed)?
        } else {
            let reg = Network::build(&spec, &[INPUT_DIM], &mut store, &Naming::split(REG_ENCODER, REG_DECODER), seed)?;
            let ae = Network::build(&spec, &[OUTPUT_DIM], &mut store, &Naming::split(AE_ENCODER, AE_DECODER), seed)?;
            Generator { reg, ae: Some(ae) }
        };
        Ok(Self { store, reg: Some(g.reg), ae: g.ae })
    }

    fn reg(&self) -> Result<&Network> {
        self.reg.as_ref().ok_or_else(|| Error::contract("model has no regression pathway"))
    }

    fn ae(&self) -> Result<&Network> {
        self.ae.as_ref().ok_or_else(|| Error::contract("model has no autoencoder pathway"))
    }

    /// Regression outputs without a graph.
    pub fn predict(&self, inputs: &Tensor) -> Result<Tensor> {
        let reg = self.reg()?;
        no_grad(|| reg.forward(inputs, BatchNormMode::Eval))
    }

    fn loss(&self, phase: Phase, s: &Tensor, y: &Tensor) -> Result<Tensor> {
        let mode = BatchNormMode::Train;
        match phase {
            Phase::Baseline => mse(&self.reg()?.forward(s, mode)?, y),
            Phase::Autoencoder => mse(&self.ae()?.forward(y, mode)?, y),
            Phase::Joint { lambda_ae, lambda_l } => {
                let (out, reg_taps) = self.reg()?.forward_with_skips(s, mode)?;
                let mut total = mse(&out, y)?;
                if lambda_ae > 0.0 || lambda_l > 0.0 {
                    let (ae_out, ae_taps) = self.ae()?.forward_with_skips(y, mode)?;
                    if lambda_ae > 0.0 {
                        total = total.add(&mse(&ae_out, y)?.mul_scalar(lambda_ae))?;
                    }
                    if lambda_l > 0.0 {
                        let lat = latent_loss(&reg_taps["bottleneck"], &ae_taps["bottleneck"])?;
                        total = total.add(&lat.mul_scalar(lambda_l))?;
                    }
                }
                Ok(total)
            }
        }
    }

    fn validation_l2(&self, phase: Phase, s: &Tensor, y: &Tensor) -> Result<f64> {
        no_grad(|| {
            let out = match phase {
                Phase::Autoencoder => self.ae()?.forward(y, BatchNormMode::Eval)?,
                _ => self.reg()?.forward(s, BatchNormMode::Eval)?,
            };
            Ok(mse(&out, y)?.item())
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutcome {
    pub iterations: usize,
    pub best_val_l2: f64,
    pub final_val_l2: f64,
}

/// Trains `phase` on fresh manifold batches drawn from `batch_rng` until
/// validation stalls or `max_iterations` is reached.
pub fn train_phase(
    model: &SyntheticModel,
    phase: Phase,
    cfg: &SyntheticConfig,
    batch_rng: &mut LabRng,
) -> Result<PhaseOutcome> {
    let val = sample_manifold_with(cfg.val_points, &mut seeded(cfg.seed, VALIDATION_STREAM))?;
    let params = model.store.parameters();
    let mut opt = Adam::new(cfg.adam());
    let mut best = f64::INFINITY;
    let mut last_improvement = 0;
    let mut final_val = f64::INFINITY;
    let mut it = 0;
    while it < cfg.max_iterations {
        let batch = sample_manifold_with(cfg.batch_size, batch_rng)?;
        model.store.zero_grad();
        let loss = model.loss(phase, &batch.inputs, &batch.outputs)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: format!("synthetic {phase:?} loss at iteration {it}, seed {}", cfg.seed),
            });
        }
        loss.backward()?;
        opt.step(&params, None)?;
        it += 1;
        if it % cfg.eval_every == 0 || it == cfg.max_iterations {
            final_val = model.validation_l2(phase, &val.inputs, &val.outputs)?;
            if final_val < best - cfg.min_improvement {
                best = final_val;
                last_improvement = it;
            }
            if it - last_improvement >= cfg.patience {
                break;
            }
        }
    }
    Ok(PhaseOutcome { iterations: it, best_val_l2: best.min(final_val), final_val_l2: final_val })
}

fn subset(state: &StateDict, prefixes: &[&str]) -> StateDict {
    state
        .iter()
        .filter(|(name, _)| prefixes.iter().any(|p| name.split('.').next() == Some(*p)))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// Total (summed) absolute error of `pred` against `target`.
pub fn total_l1(pred: &Tensor, target: &Tensor) -> f64 {
    pred.data().iter().zip(target.data().iter()).map(|(a, b)| (a - b).abs()).sum()
}

#[derive(Clone)]
pub struct SyntheticResult {
    pub seed: u64,
    pub l1_baseline: f64,
    pub l1_twopathway: f64,
    pub baseline: PhaseOutcome,
    pub autoencoder: PhaseOutcome,
    pub joint: PhaseOutcome,
    /// Test points and both models' predictions, for plotting.
    pub test_xy: Vec<[f64; 2]>,
    pub target: Tensor,
    pub baseline_pred: Tensor,
    pub twopathway_pred: Tensor,
    pub baseline_store: ParameterStore,
    /// Both pathways, decoder stored once when tied.
    pub joint_store: ParameterStore,
}

impl SyntheticResult {
    pub fn ratio(&self) -> f64 {
        self.l1_twopathway / self.l1_baseline
    }
}

/// Pretrains the baseline and the autoencoder, initializes the two-pathway
/// model from them (regression encoder from the baseline, autoencoder and
/// shared decoder from the autoencoder), trains it jointly, and scores both
/// regression networks on fresh test points.
pub fn run_synthetic_experiment(cfg: &SyntheticConfig) -> Result<SyntheticResult> {
    cfg.validate()?;
    let baseline = SyntheticModel::baseline(cfg.hidden, cfg.seed)?;
    let base_out = train_phase(&baseline, Phase::Baseline, cfg, &mut seeded(cfg.seed, BASELINE_STREAM))?;
    let ae = SyntheticModel::autoencoder(cfg.hidden, cfg.seed)?;
    let ae_out = train_phase(&ae, Phase::Autoencoder, cfg, &mut seeded(cfg.seed, AE_STREAM))?;

    let joint = SyntheticModel::two_pathway(cfg.hidden, cfg.seed, cfg.tie_decoder)?;
    let reg_prefixes: &[&str] = if cfg.tie_decoder { &[REG_ENCODER] } else { &[REG_ENCODER, REG_DECODER] };
    joint.store.load_state_dict(&subset(&baseline.store.state_dict(), reg_prefixes))?;
    joint.store.load_state_dict(&ae.store.state_dict())?;
    let phase = Phase::Joint { lambda_ae: cfg.lambda_ae, lambda_l: cfg.lambda_l };
    let joint_out = train_phase(&joint, phase, cfg, &mut seeded(cfg.seed, JOINT_STREAM))?;

    let test = sample_manifold_with(cfg.test_points, &mut seeded(cfg.seed, TEST_STREAM))?;
    let baseline_pred = baseline.predict(&test.inputs)?;
    let twopathway_pred = joint.predict(&test.inputs)?;
    Ok(SyntheticResult {
        seed: cfg.seed,
        l1_baseline: total_l1(&baseline_pred, &test.outputs),
        l1_twopathway: total_l1(&twopathway_pred, &test.outputs),
        baseline: base_out,
        autoencoder: ae_out,
        joint: joint_out,
        test_xy: test.xy,
        target: test.outputs,
        baseline_pred,
        twopathway_pred,
        baseline_store: baseline.store,
        joint_store: joint.store,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            max_iterations: 60,
            eval_every: 20,
            val_points: 64,
            test_points: 100,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn defaults_follow_the_experiment_protocol() {
        let c = SyntheticConfig::default();
        assert_eq!((c.batch_size, c.max_iterations, c.patience), (128, 100_000, 5_000));
        assert_eq!(c.learning_rate, 2e-5);
        assert_eq!(c.min_improvement, 1e-6);
    }

    #[test]
    fn joint_phase_without_autoencoder_terms_reproduces_the_baseline() {
        let cfg = short(3);
        let base = SyntheticModel::baseline(cfg.hidden, 3).unwrap();
        let joint = SyntheticModel::two_pathway(cfg.hidden, 3, false).unwrap();
        joint.store.load_state_dict(&base.store.state_dict()).unwrap();
        train_phase(&base, Phase::Baseline, &cfg, &mut seeded(9, 9)).unwrap();
        let zero = Phase::Joint { lambda_ae: 0.0, lambda_l: 0.0 };
        train_phase(&joint, zero, &cfg, &mut seeded(9, 9)).unwrap();
        let joint_state = joint.store.state_dict();
        for (name, value) in base.store.state_dict() {
            assert_eq!(joint_state[&name], value, "{name}");
        }
    }

    #[test]
    fn shared_decoder_is_initialized_from_the_autoencoder() {
        let r = run_synthetic_experiment(&short(1)).unwrap();
        assert!(r.l1_baseline.is_finite() && r.l1_twopathway.is_finite());
        assert_eq!(r.target.shape(), &[100, 4]);
        assert!(r.joint.iterations <= 60);
    }

    #[test]
    fn validation_catches_bad_settings() {
        assert!(SyntheticConfig { batch_size: 1, ..Default::default() }.validate().is_err());
        assert!(SyntheticConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }
}
