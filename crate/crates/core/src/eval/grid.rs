use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ssim::batch_ssim;
use crate::data::{corrupt_batch, to_image_space, to_model_space, CorruptionSpec, ImageDataset};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rng::{seeded, streams};
use crate::tensor::{no_grad, BatchNormMode, Tensor};
use crate::train::{AaeTrainer, GanTrainer};

pub const HISTOGRAM_BINS: usize = 20;
const EVAL_BATCH: usize = 64;

/// A model mapping corrupted sources to restored targets, both in model
/// space `[-1, 1]`.
pub trait Restorer {
    /// Eval-mode forward that records a graph, so gradients can flow back
    /// to the input.
    fn forward(&self, s: &Tensor) -> Result<Tensor>;

    fn restore(&self, s: &Tensor) -> Result<Tensor> {
        no_grad(|| self.forward(s))
    }
}

impl<F: Fn(&Tensor) -> Result<Tensor>> Restorer for F {
    fn forward(&self, s: &Tensor) -> Result<Tensor> {
        self(s)
    }
}

impl Restorer for Network {
    fn forward(&self, s: &Tensor) -> Result<Tensor> {
        Network::forward(self, s, BatchNormMode::Eval)
    }
}

impl Restorer for GanTrainer {
    fn forward(&self, s: &Tensor) -> Result<Tensor> {
        self.generator.reg.forward(s, BatchNormMode::Eval)
    }
}

impl Restorer for AaeTrainer {
    fn forward(&self, s: &Tensor) -> Result<Tensor> {
        self.model.autoencoder.forward(s, BatchNormMode::Eval)
    }
}

/// Fixed-width histogram over `[0, 1]`. Values outside the range are
/// counted in the nearest end bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn unit(values: &[f64], bins: usize) -> Self {
        let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let b = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self { edges, counts }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// One corruption setting of a grid evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub spec: CorruptionSpec,
    pub ssim: f64,
    pub l1: f64,
    /// Corrupted input against the clean target.
    pub input_ssim: f64,
    pub input_l1: f64,
    pub ssim_values: Vec<f64>,
    pub histogram: Histogram,
}

impl GridCell {
    pub fn label(&self) -> String {
        self.spec.label()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment_id: String,
    pub grid_label: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub experiment_id: String,
    pub seed: u64,
    pub cells: Vec<GridCell>,
}

impl EvalReport {
    pub fn cell(&self, label: &str) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.label() == label)
    }

    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for c in &self.cells {
            for (metric, value) in
                [("ssim", c.ssim), ("l1", c.l1), ("input_ssim", c.input_ssim), ("input_l1", c.input_l1)]
            {
                rows.push(MetricRow {
                    experiment_id: self.experiment_id.clone(),
                    grid_label: c.label(),
                    metric: metric.into(),
                    value,
                    seed: self.seed,
                });
            }
        }
        rows
    }

    /// Writes `metrics.csv` and one `hist_<label>.csv` per cell.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_rows(dir.join("metrics.csv"), &self.rows())?;
        for c in &self.cells {
            c.histogram.write_csv(dir.join(format!("hist_{}.csv", c.label().replace('/', "_"))))?;
        }
        Ok(())
    }
}

pub fn write_rows(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let n = a.shape()[0];
    let size = a.numel() / n;
    let (da, db) = (a.data(), b.data());
    (0..n)
        .map(|i| {
            da[i * size..(i + 1) * size]
                .iter()
                .zip(&db[i * size..(i + 1) * size])
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / size as f64
        })
        .collect()
}

/// Restoration in image space, clamped to `[0, 1]`.
pub fn restore_images(model: &impl Restorer, corrupted: &Tensor) -> Result<Tensor> {
    let out = to_image_space(&model.restore(&to_model_space(corrupted))?);
    let clamped: Vec<f64> = out.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::new(out.shape(), clamped)
}

/// Corrupts every image of `dataset` under each grid spec (masks drawn
/// from the spec's seed), restores it with `model`, and scores the result
/// against the clean image. SSIM and mean per-pixel l1 are computed in
/// image space.
pub fn eval_grid(
    model: &impl Restorer,
    dataset: &ImageDataset,
    grid: &[CorruptionSpec],
    experiment_id: &str,
    seed: u64,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::contract("evaluation needs a non-empty dataset"));
    }
    let mut cells = Vec::with_capacity(grid.len());
    for spec in grid {
        spec.validate()?;
        let mut rng = seeded(spec.seed, streams::EVAL);
        let (mut ssim_values, mut l1_values, mut in_ssim, mut in_l1) = (vec![], vec![], vec![], vec![]);
        for start in (0..dataset.len()).step_by(EVAL_BATCH) {
            let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(dataset.len())).collect();
            let y = dataset.batch(&idx)?;
            let s = corrupt_batch(&y, spec.drop_rate, spec.black_rate, &mut rng)?;
            let restored = restore_images(model, &s)?;
            ssim_values.extend(batch_ssim(&restored, &y)?);
            l1_values.extend(mean_abs_diff(&restored, &y));
            in_ssim.extend(batch_ssim(&s, &y)?);
            in_l1.extend(mean_abs_diff(&s, &y));
        }
        cells.push(GridCell {
            spec: *spec,
            ssim: mean(&ssim_values),
            l1: mean(&l1_values),
            input_ssim: mean(&in_ssim),
            input_l1: mean(&in_l1),
            histogram: Histogram::unit(&ssim_values, HISTOGRAM_BINS),
            ssim_values,
        });
    }
    Ok(EvalReport { experiment_id: experiment_id.to_string(), seed, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_procedural_images;

    #[test]
    fn histogram_bins_and_edges() {
        let h = Histogram::unit(&[0.0, 0.049, 0.05, 0.999, 1.0, -0.2, 1.3], HISTOGRAM_BINS);
        assert_eq!(h.counts.len(), 20);
        assert_eq!(h.edges.len(), 21);
        assert_eq!(h.counts[0], 3);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[19], 3);
        assert_eq!(h.counts.iter().sum::<usize>(), 7);
    }

    #[test]
    fn identity_model_scores_its_input() {
        let data = gen_procedural_images(10, 16, 0).unwrap();
        let grid = [CorruptionSpec::new(0.25, 0.0, 1), CorruptionSpec::new(0.5, 0.0, 1)];
        let identity = |s: &Tensor| Ok(s.clone());
        let r = eval_grid(&identity, &data, &grid, "identity", 0).unwrap();
        assert_eq!(r.cells.len(), 2);
        assert_eq!(r.rows().len(), 8);
        for c in &r.cells {
            assert!((c.ssim - c.input_ssim).abs() < 1e-12);
            assert_eq!(c.histogram.counts.iter().sum::<usize>(), 10);
        }
        assert!(r.cells[0].ssim > r.cells[1].ssim);
        assert!(eval_grid(&identity, &data.subset(0..0), &grid, "x", 0).is_err());
    }
}
