//! The two-parameter synthetic manifold: inputs `[x, y, e^(2x)]` and outputs
//! `[x + 2y + 4, e^x + 1, x + y + 3, x + 2]` over `x, y ∈ [-1, 1]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

pub const INPUT_DIM: usize = 3;
pub const OUTPUT_DIM: usize = 4;

const STREAM: u64 = 0x6d61_6e69_666f_6c64;

pub fn input_map(x: f64, y: f64) -> [f64; INPUT_DIM] {
    [x, y, (2.0 * x).exp()]
}

pub fn output_map(x: f64, y: f64) -> [f64; OUTPUT_DIM] {
    [x + 2.0 * y + 4.0, x.exp() + 1.0, x + y + 3.0, x + 2.0]
}

#[derive(Clone, Debug)]
pub struct ManifoldSample {
    pub xy: Vec<[f64; 2]>,
    /// `[n, 3]`
    pub inputs: Tensor,
    /// `[n, 4]`
    pub outputs: Tensor,
}

/// `n` points with `(x, y)` uniform on `[-1, 1]^2`.
pub fn sample_manifold(n: usize, seed: u64) -> Result<ManifoldSample> {
    sample_manifold_with(n, &mut seeded(seed, STREAM))
}

/// As [`sample_manifold`], drawing from a caller-owned generator.
pub fn sample_manifold_with(n: usize, rng: &mut impl Rng) -> Result<ManifoldSample> {
    if n == 0 {
        return Err(Error::contract("sample_manifold needs n >= 1"));
    }
    let xy: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]).collect();
    let inputs: Vec<f64> = xy.iter().flat_map(|&[x, y]| input_map(x, y)).collect();
    let outputs: Vec<f64> = xy.iter().flat_map(|&[x, y]| output_map(x, y)).collect();
    Ok(ManifoldSample {
        xy,
        inputs: Tensor::new(&[n, INPUT_DIM], inputs)?,
        outputs: Tensor::new(&[n, OUTPUT_DIM], outputs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn maps_at_fixed_points() {
        assert_eq!(input_map(0.0, 0.0), [0.0, 0.0, 1.0]);
        assert_eq!(output_map(0.0, 0.0), [4.0, 2.0, 3.0, 2.0]);
        let inp = input_map(1.0, -1.0);
        assert_eq!(&inp[..2], &[1.0, -1.0]);
        assert!((inp[2] - E * E).abs() < 1e-14);
        let out = output_map(1.0, -1.0);
        assert_eq!(out[0], 3.0);
        assert!((out[1] - (E + 1.0)).abs() < 1e-15);
        assert_eq!(&out[2..], &[3.0, 3.0]);
    }

    #[test]
    fn samples_cover_the_square_and_satisfy_the_identity() {
        let s = sample_manifold(6400, 9).unwrap();
        let out = s.outputs.to_vec();
        for (i, &[x, y]) in s.xy.iter().enumerate() {
            let d = out[i * 4] - out[i * 4 + 2];
            assert!((d - (y + 1.0)).abs() < 1e-12);
            assert!((-1e-12..=2.0 + 1e-12).contains(&d));
            assert!((-1.0..=1.0).contains(&x));
        }
        let (xmin, xmax) = s.xy.iter().fold((1.0f64, -1.0f64), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])));
        let (ymin, ymax) = s.xy.iter().fold((1.0f64, -1.0f64), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])));
        for v in [xmin, ymin] {
            assert!(v < -0.99);
        }
        for v in [xmax, ymax] {
            assert!(v > 0.99);
        }
    }
}
