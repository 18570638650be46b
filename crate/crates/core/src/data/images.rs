//! Procedural RGB images on a known 6-dimensional manifold: an oriented
//! two-tone gradient background with an anti-aliased Gaussian blob.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tnsr::{self, Dtype};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;
pub const SIDES: [usize; 3] = [16, 32, 64];

/// Normalized latent coordinates, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
    pub orientation: f64,
    pub hue_a: f64,
    pub hue_b: f64,
}

impl Latent {
    pub fn from_array(v: [f64; 6]) -> Self {
        Self { cx: v[0], cy: v[1], scale: v[2], orientation: v[3], hue_a: v[4], hue_b: v[5] }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.cx, self.cy, self.scale, self.orientation, self.hue_a, self.hue_b]
    }

    fn sample(rng: &mut impl Rng) -> Self {
        let mut v = [0.0; 6];
        v.iter_mut().for_each(|x| *x = rng.random::<f64>());
        Self::from_array(v)
    }
}

fn hue_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let channel = |offset: f64| {
        let k = (offset + h6).rem_euclid(6.0);
        v - v * s * k.min(4.0 - k).clamp(0.0, 1.0)
    };
    [channel(5.0), channel(3.0), channel(1.0)]
}

/// Renders a `[3, side, side]` image with values in `[0, 1]`, 2x2
/// supersampled per pixel.
pub fn render(latent: &Latent, side: usize) -> Vec<f64> {
    let cx = 0.2 + 0.6 * latent.cx;
    let cy = 0.2 + 0.6 * latent.cy;
    let sigma = 0.08 + 0.17 * latent.scale;
    let theta = std::f64::consts::PI * latent.orientation;
    let (dir_x, dir_y) = (theta.cos(), theta.sin());
    let blob = hue_to_rgb(latent.hue_a, 0.8, 0.95);
    let back = hue_to_rgb(latent.hue_b, 0.6, 0.85);
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let plane = side * side;
    let mut out = vec![0.0; CHANNELS * plane];
    let step = 1.0 / side as f64;
    for i in 0..side {
        for j in 0..side {
            let mut acc = [0.0; 3];
            for (si, sj) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let x = (j as f64 + sj) * step;
                let y = (i as f64 + si) * step;
                let t = (0.5 + (x - 0.5) * dir_x + (y - 0.5) * dir_y).clamp(0.0, 1.0);
                let shade = 0.25 + 0.7 * t;
                let g = (-((x - cx).powi(2) + (y - cy).powi(2)) * inv_two_var).exp();
                for c in 0..CHANNELS {
                    acc[c] += (1.0 - g) * back[c] * shade + g * blob[c];
                }
            }
            for c in 0..CHANNELS {
                out[c * plane + i * side + j] = acc[c] / 4.0;
            }
        }
    }
    out
}

/// A dataset of procedural images kept in image space `[0, 1]`.
#[derive(Clone, Debug)]
pub struct ImageDataset {
    pub side: usize,
    pub seed: u64,
    pub latents: Vec<Latent>,
    pixels: Vec<f64>,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [CHANNELS, self.side, self.side]
    }

    pub fn image(&self, index: usize) -> &[f64] {
        let n = CHANNELS * self.side * self.side;
        &self.pixels[index * n..(index + 1) * n]
    }

    /// `[k, 3, side, side]` stack of the selected images in `[0, 1]`.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * CHANNELS * self.side * self.side);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::contract(format!("image index {i} out of {}", self.len())));
            }
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(&[indices.len(), CHANNELS, self.side, self.side], data)
    }

    pub fn all(&self) -> Result<Tensor> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// A dataset holding images `range` of this one.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Self {
        let n = CHANNELS * self.side * self.side;
        Self {
            side: self.side,
            seed: self.seed,
            latents: self.latents[range.clone()].to_vec(),
            pixels: self.pixels[range.start * n..range.end * n].to_vec(),
        }
    }

    /// Writes `images.tnsr`, `latents.csv` and `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        tnsr::write(dir.join("images.tnsr"), &[self.len(), CHANNELS, self.side, self.side], &self.pixels, Dtype::F32)?;
        let mut w = csv::Writer::from_path(dir.join("latents.csv"))?;
        w.write_record(["index", "cx", "cy", "scale", "orientation", "hue_a", "hue_b"])?;
        for (i, l) in self.latents.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(l.to_array().iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(dir.join("latents.csv"), e))?;
        let manifest = DatasetManifest {
            count: self.len(),
            side: self.side,
            seed: self.seed,
            images: "images.tnsr".into(),
            latent_log: "latents.csv".into(),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub count: usize,
    pub side: usize,
    pub seed: u64,
    pub images: String,
    pub latent_log: String,
}

/// `n` images of size `side`; image `i` depends only on `(seed, i)`.
pub fn gen_procedural_images(n: usize, side: usize, seed: u64) -> Result<ImageDataset> {
    if !SIDES.contains(&side) {
        return Err(Error::contract(format!("image side must be one of {SIDES:?}, got {side}")));
    }
    let latents: Vec<Latent> = (0..n).map(|i| Latent::sample(&mut seeded(seed, i as u64))).collect();
    let pixels = latents.iter().flat_map(|l| render(l, side)).collect();
    Ok(ImageDataset { side, seed, latents, pixels })
}

/// Image space `[0, 1]` to model space `[-1, 1]`.
pub fn to_model_space(x: &Tensor) -> Tensor {
    x.mul_scalar(2.0).add_scalar(-1.0)
}

pub fn to_image_space(x: &Tensor) -> Tensor {
    x.add_scalar(1.0).mul_scalar(0.5)
}
