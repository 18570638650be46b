use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rocgan_core::data::CorruptionSpec;
use rocgan_core::eval::SyntheticConfig;
use rocgan_core::losses::LossWeights;
use rocgan_core::train::{ImageTask, Mode};

pub const EXPERIMENTS: [&str; 9] = [
    "synthetic",
    "image_denoise",
    "image_inpaint",
    "robustness_grid",
    "fgsm",
    "theory",
    "linear_analogy",
    "ablation_lambda",
    "semi_supervised",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Synthetic,
    ImageDenoise,
    ImageInpaint,
    RobustnessGrid,
    Fgsm,
    Theory,
    LinearAnalogy,
    AblationLambda,
    SemiSupervised,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        EXPERIMENTS[self as usize]
    }

    fn trains_images(self) -> bool {
        !matches!(self, Experiment::Synthetic | Experiment::Theory | Experiment::LinearAnalogy)
    }
}

/// A validation failure pointing at the offending config field.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.to_string(), message: message.into() }
}

fn default_lr() -> f64 {
    2e-4
}
fn default_batch() -> usize {
    8
}
fn default_iterations() -> usize {
    10_000
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

/// Optimizer and schedule shared by every image training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    /// Overrides the per-mode defaults when set.
    #[serde(default)]
    pub loss_weights: Option<LossWeights>,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub minimax_generator: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

fn default_epsilon() -> f64 {
    rocgan_core::eval::fgsm::DEFAULT_EPSILON
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FgsmSettings {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for FgsmSettings {
    fn default() -> Self {
        Self { epsilon: default_epsilon() }
    }
}

fn default_trials() -> usize {
    100
}
fn default_outcomes() -> usize {
    6
}
fn default_fixture() -> Vec<f64> {
    vec![0.1, 0.2, 0.3, 0.4]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySettings {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_outcomes")]
    pub outcomes: usize,
    /// Used as both `p_d` and `p_g` for the equal-distribution row.
    #[serde(default = "default_fixture")]
    pub fixture: Vec<f64>,
}

impl Default for TheorySettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

fn default_linear_side() -> usize {
    16
}
fn default_linear_train() -> usize {
    500
}
fn default_probes() -> usize {
    20
}
fn default_variance() -> f64 {
    0.9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSettings {
    #[serde(default = "default_linear_side")]
    pub side: usize,
    #[serde(default = "default_linear_train")]
    pub train_count: usize,
    #[serde(default = "default_probes")]
    pub probe_count: usize,
    /// Variance fraction kept by the PCA.
    #[serde(default = "default_variance")]
    pub variance: f64,
}

impl Default for LinearSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSettings {
    pub labelled_count: usize,
    pub unlabelled_count: usize,
    #[serde(default)]
    pub unlabelled_batch: Option<usize>,
}

pub const LAMBDA_NAMES: [&str; 5] = ["lambda_c", "lambda_pi", "lambda_ae", "lambda_l", "lambda_decov"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Models to train; image experiments default to cgan and rocgan.
    #[serde(default)]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub task: ImageTask,
    #[serde(default)]
    pub train: TrainSettings,
    /// Training corruption as an `x/y` label.
    #[serde(default)]
    pub corruption: Option<String>,
    /// Evaluation grid as `x/y` labels; defaults to the training corruption
    /// alone, or the full noise grid for `robustness_grid`.
    #[serde(default)]
    pub grid: Vec<String>,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub fgsm: FgsmSettings,
    #[serde(default)]
    pub theory: TheorySettings,
    #[serde(default)]
    pub linear_analogy: LinearSettings,
    /// Sweep values per loss weight name for `ablation_lambda`.
    #[serde(default)]
    pub ablation: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub semi_supervised: Option<SemiSettings>,
}

pub const ROBUSTNESS_GRID: [&str; 6] = ["25/0", "35/0", "50/0", "25/10", "25/20", "25/25"];

impl ExperimentConfig {
    /// Parses and validates a config, resolving relative output paths
    /// against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| invalid("", e.to_string()))?;
        match raw.get("experiment") {
            Some(serde_json::Value::String(name)) if EXPERIMENTS.contains(&name.as_str()) => {}
            Some(other) => {
                return Err(invalid(
                    "experiment",
                    format!("unknown experiment {other}, expected one of {EXPERIMENTS:?}"),
                ))
            }
            None => return Err(invalid("experiment", "missing field")),
        }
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(raw).map_err(|e| {
            let field = e.path().to_string();
            invalid(if field == "." { "" } else { &field }, e.into_inner().to_string())
        })?;
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Fills experiment-dependent defaults and checks cross-field rules.
    fn resolve(&mut self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if self.modes.is_empty() {
            self.modes = match self.experiment {
                Experiment::AblationLambda | Experiment::SemiSupervised => vec![Mode::Rocgan],
                _ => vec![Mode::Cgan, Mode::Rocgan],
            };
        }
        if let Some(m) = self.modes.iter().find(|m| **m == Mode::Aae) {
            if self.experiment != Experiment::ImageDenoise && self.experiment != Experiment::RobustnessGrid {
                return Err(invalid("modes", format!("{m:?} is only supported by image_denoise and robustness_grid")));
            }
        }
        if self.corruption.is_none() {
            self.corruption = Some(if self.experiment == Experiment::ImageInpaint { "0/50" } else { "25/0" }.into());
        }
        let training = self.training_corruption().map_err(|m| invalid("corruption", m))?;
        if self.grid.is_empty() {
            self.grid = if self.experiment == Experiment::RobustnessGrid {
                ROBUSTNESS_GRID.iter().map(|s| s.to_string()).collect()
            } else {
                vec![training.label()]
            };
        }
        for (i, label) in self.grid.iter().enumerate() {
            CorruptionSpec::from_label(label, 0).map_err(|e| invalid(&format!("grid[{i}]"), e.to_string()))?;
        }
        let t = &self.train;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(invalid("train.learning_rate", "must be positive"));
        }
        if t.batch_size < 2 {
            return Err(invalid("train.batch_size", "must be at least 2"));
        }
        if self.experiment.trains_images() && t.iterations == 0 {
            return Err(invalid("train.iterations", "must be positive"));
        }
        if let Some(w) = &t.loss_weights {
            w.validate().map_err(|e| invalid("train.loss_weights", e.to_string()))?;
        }
        if self.checkpoint_every == Some(0) {
            return Err(invalid("checkpoint_every", "must be positive"));
        }
        if self.experiment.trains_images() {
            self.task.datasets_check().map_err(|m| invalid("task", m))?;
        }
        if self.fgsm.epsilon.is_nan() || self.fgsm.epsilon <= 0.0 {
            return Err(invalid("fgsm.epsilon", "must be positive"));
        }
        self.synthetic.validate().map_err(|e| invalid("synthetic", e.to_string()))?;
        if self.theory.trials == 0 || self.theory.outcomes < 2 {
            return Err(invalid("theory", "need at least one trial and two outcomes"));
        }
        if self.experiment == Experiment::AblationLambda {
            if self.ablation.is_empty() {
                return Err(invalid("ablation", "needs at least one swept loss weight"));
            }
            for (name, values) in &self.ablation {
                if !LAMBDA_NAMES.contains(&name.as_str()) {
                    return Err(invalid(&format!("ablation.{name}"), format!("expected one of {LAMBDA_NAMES:?}")));
                }
                if values.is_empty() || values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(invalid(&format!("ablation.{name}"), "values must be finite and non-negative"));
                }
            }
        }
        if self.experiment == Experiment::SemiSupervised {
            let Some(s) = &self.semi_supervised else {
                return Err(invalid("semi_supervised", "required for the semi_supervised experiment"));
            };
            if s.labelled_count == 0 {
                return Err(invalid("semi_supervised.labelled_count", "must be positive"));
            }
            if s.labelled_count + s.unlabelled_count > self.task.train_count {
                return Err(invalid("semi_supervised", "labelled + unlabelled exceeds task.train_count"));
            }
        }
        Ok(())
    }

    pub fn training_corruption(&self) -> Result<CorruptionSpec, String> {
        let label = self.corruption.as_deref().unwrap_or("25/0");
        CorruptionSpec::from_label(label, 0).map_err(|e| e.to_string())
    }

    /// Grid specs with masks seeded from the run seed.
    pub fn grid_specs(&self, seed: u64) -> Vec<CorruptionSpec> {
        self.grid.iter().map(|l| CorruptionSpec::from_label(l, seed).expect("validated")).collect()
    }
}

trait TaskCheck {
    fn datasets_check(&self) -> Result<(), String>;
}

impl TaskCheck for ImageTask {
    fn datasets_check(&self) -> Result<(), String> {
        if ![16, 32, 64].contains(&self.side) {
            return Err(format!("side must be 16, 32 or 64, got {}", self.side));
        }
        if self.train_count == 0 || self.test_count == 0 {
            return Err("train_count and test_count must be positive".into());
        }
        if self.channel_scale.is_nan() || self.channel_scale <= 0.0 {
            return Err("channel_scale must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::parse(text, Path::new("/tmp"))
    }

    #[test]
    fn defaults_are_materialized() {
        let c = parse(r#"{"experiment": "robustness_grid", "output_dir": "out", "seeds": [0]}"#).unwrap();
        assert_eq!(c.output_dir, Path::new("/tmp/out"));
        assert_eq!(c.modes, vec![Mode::Cgan, Mode::Rocgan]);
        assert_eq!(c.grid.len(), 6);
        assert_eq!(c.corruption.as_deref(), Some("25/0"));
        let inpaint = parse(r#"{"experiment": "image_inpaint", "output_dir": "o", "seeds": [1]}"#).unwrap();
        assert_eq!(inpaint.grid, vec!["0/50".to_string()]);
    }

    #[test]
    fn errors_name_the_field() {
        let e = parse(r#"{"experiment": "nope", "output_dir": "o", "seeds": [0]}"#).unwrap_err();
        assert_eq!(e.field, "experiment");
        let e = parse(r#"{"experiment": "theory", "output_dir": "o", "seeds": []}"#).unwrap_err();
        assert_eq!(e.field, "seeds");
        let e = parse(r#"{"experiment": "theory", "output_dir": "o", "seeds": [0], "train": {"batch_size": "x"}}"#)
            .unwrap_err();
        assert_eq!(e.field, "train.batch_size");
        let e =
            parse(r#"{"experiment": "fgsm", "output_dir": "o", "seeds": [0], "grid": ["25/0", "7/x"]}"#).unwrap_err();
        assert_eq!(e.field, "grid[1]");
        let e = parse(
            r#"{"experiment": "ablation_lambda", "output_dir": "o", "seeds": [0], "ablation": {"lambda_q": [1]}}"#,
        )
        .unwrap_err();
        assert_eq!(e.field, "ablation.lambda_q");
    }
}
