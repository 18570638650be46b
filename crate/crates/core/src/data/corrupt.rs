//! Pixel-drop ("denoising") and black-pixel ("sparse inpainting")
//! corruptions, applied in image space `[0, 1]`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

/// `drop_rate` zeroes each (channel, pixel) independently; `black_rate`
/// zeroes all channels of a pixel. The grid label `x/y` means
/// `drop_rate = x / 100`, `black_rate = y / 100`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub drop_rate: f64,
    #[serde(default)]
    pub black_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(drop_rate: f64, black_rate: f64, seed: u64) -> Self {
        Self { drop_rate, black_rate, seed }
    }

    /// Parses an `x/y` grid label such as `25/10`.
    pub fn from_label(label: &str, seed: u64) -> Result<Self> {
        let parse =
            |s: &str| s.trim().parse::<f64>().map_err(|_| Error::contract(format!("bad corruption label `{label}`")));
        let (x, y) = match label.split_once('/') {
            Some((x, y)) => (parse(x)?, parse(y)?),
            None => (parse(label)?, 0.0),
        };
        let spec = Self::new(x / 100.0, y / 100.0, seed);
        spec.validate()?;
        Ok(spec)
    }

    pub fn label(&self) -> String {
        format!("{}/{}", pct(self.drop_rate), pct(self.black_rate))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("drop_rate", self.drop_rate), ("black_rate", self.black_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::contract(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }
}

fn pct(rate: f64) -> String {
    let p = rate * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p}")
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Corrupts one `channels x pixels` image in place: first the per-channel
/// drop draws (channel-major), then one black draw per pixel.
pub fn corrupt_in_place(img: &mut [f64], channels: usize, drop_rate: f64, black_rate: f64, rng: &mut impl Rng) {
    let pixels = img.len() / channels;
    if drop_rate > 0.0 {
        for v in img.iter_mut() {
            if rng.random::<f64>() < drop_rate {
                *v = 0.0;
            }
        }
    }
    if black_rate > 0.0 {
        for p in 0..pixels {
            if rng.random::<f64>() < black_rate {
                for c in 0..channels {
                    img[c * pixels + p] = 0.0;
                }
            }
        }
    }
}

/// Corrupts a `[C, H, W]` image with the spec's own seed.
pub fn corrupt(img: &Tensor, spec: &CorruptionSpec) -> Result<Tensor> {
    spec.validate()?;
    let &[c, _, _] = img.shape() else {
        return Err(Error::shape("corrupt", format!("expected [C, H, W], got {:?}", img.shape())));
    };
    let mut data = img.to_vec();
    corrupt_in_place(&mut data, c, spec.drop_rate, spec.black_rate, &mut seeded(spec.seed, 0));
    Tensor::new(img.shape(), data)
}

/// Corrupts every image of an `[N, C, H, W]` batch with draws from `rng`.
pub fn corrupt_batch(batch: &Tensor, drop_rate: f64, black_rate: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let &[n, c, h, w] = batch.shape() else {
        return Err(Error::shape("corrupt_batch", format!("expected [N, C, H, W], got {:?}", batch.shape())));
    };
    let mut data = batch.to_vec();
    for img in data.chunks_mut(c * h * w).take(n) {
        corrupt_in_place(img, c, drop_rate, black_rate, rng);
    }
    Tensor::new(batch.shape(), data)
}
