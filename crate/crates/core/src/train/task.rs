use serde::{Deserialize, Serialize};

use super::{GanTrainer, Mode, TrainConfig};
use crate::data::{gen_procedural_images, CorruptionSpec, ImageDataset};
use crate::error::Result;
use crate::models::{discriminator_spec, Preset};
use crate::nn::NetworkSpec;

fn default_side() -> usize {
    32
}
fn default_scale() -> f64 {
    0.125
}
fn default_train_count() -> usize {
    2_000
}
fn default_test_count() -> usize {
    200
}
fn default_data_seed() -> u64 {
    2_024
}
fn default_preset() -> Preset {
    Preset::FourLayer
}

/// A procedural image restoration task: datasets, architecture and the
/// channel width scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageTask {
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default = "default_scale")]
    pub channel_scale: f64,
    #[serde(default = "default_train_count")]
    pub train_count: usize,
    #[serde(default = "default_test_count")]
    pub test_count: usize,
    /// Seed of the procedural images; independent of training seeds.
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    #[serde(default = "default_preset")]
    pub preset: Preset,
}

impl Default for ImageTask {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ImageTask {
    /// Training images followed by disjoint test images.
    pub fn datasets(&self) -> Result<(ImageDataset, ImageDataset)> {
        let all = gen_procedural_images(self.train_count + self.test_count, self.side, self.data_seed)?;
        let train = all.subset(0..self.train_count);
        let test = all.subset(self.train_count..self.train_count + self.test_count);
        Ok((train, test))
    }

    pub fn generator_spec(&self) -> NetworkSpec {
        self.preset.spec().with_scale(self.channel_scale)
    }

    pub fn discriminator_spec(&self) -> NetworkSpec {
        discriminator_spec().with_scale(self.channel_scale)
    }

    pub fn trainer(
        &self,
        config: TrainConfig,
        train: ImageDataset,
        unlabelled: Option<ImageDataset>,
    ) -> Result<GanTrainer> {
        GanTrainer::new(config, &self.generator_spec(), &self.discriminator_spec(), train, unlabelled)
    }
}

/// Training settings used by the image experiments: batch 8, learning rate
/// 2e-4 and the mode's default loss weights.
pub fn image_config(mode: Mode, iterations: usize, seed: u64, corruption: CorruptionSpec) -> TrainConfig {
    TrainConfig { learning_rate: 2e-4, corruption, ..TrainConfig::new(mode, 8, iterations, seed) }
}
