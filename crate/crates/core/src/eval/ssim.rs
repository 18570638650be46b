//! Structural similarity with an 11x11 Gaussian window (sigma 1.5),
//! `K1 = 0.01`, `K2 = 0.03` and a dynamic range of 1.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const C1: f64 = K1 * K1;
pub const C2: f64 = K2 * K2;

/// Normalized 1-d Gaussian taps of length `len`, centred on the full
/// window. Shorter lengths keep the central taps.
fn taps(len: usize) -> Vec<f64> {
    let half = (WINDOW / 2) as f64;
    let skip = (WINDOW - len) / 2;
    let raw: Vec<f64> =
        (skip..skip + len).map(|i| (-(i as f64 - half).powi(2) / (2.0 * SIGMA * SIGMA)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter(x: &[f64], h: usize, w: usize, ky: &[f64], kx: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - ky.len(), w + 1 - kx.len());
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        let line = &x[i * w..(i + 1) * w];
        for j in 0..ow {
            rows[i * ow + j] = kx.iter().zip(&line[j..]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for (t, k) in ky.iter().enumerate() {
            let src = &rows[(i + t) * ow..(i + t + 1) * ow];
            for (o, v) in out[i * ow..(i + 1) * ow].iter_mut().zip(src) {
                *o += k * v;
            }
        }
    }
    out
}

/// Mean local SSIM of one plane. Planes smaller than the window use a
/// window truncated to the plane, which leaves exactly one position along
/// that axis.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let (ky, kx) = (taps(h.min(WINDOW)), taps(w.min(WINDOW)));
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter(a, h, w, &ky, &kx);
    let mu_b = filter(b, h, w, &ky, &kx);
    let aa = filter(&prod(a, a), h, w, &ky, &kx);
    let bb = filter(&prod(b, b), h, w, &ky, &kx);
    let ab = filter(&prod(a, b), h, w, &ky, &kx);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = aa[i] - ma * ma;
            let var_b = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (var_a + var_b + C2))
        })
        .sum();
    total / mu_a.len() as f64
}

/// SSIM of two `[C, H, W]` (or `[H, W]`) images in `[0, 1]`, averaged over
/// channels.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (c, h, w) = match *a.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::shape("ssim", format!("expected [C, H, W] or [H, W], got {s:?}"))),
    };
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::shape("ssim", "empty image"));
    }
    Ok(ssim_slices(&a.data(), &b.data(), c, h, w))
}

pub(crate) fn ssim_slices(a: &[f64], b: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let plane = h * w;
    (0..c).map(|k| ssim_plane(&a[k * plane..(k + 1) * plane], &b[k * plane..(k + 1) * plane], h, w)).sum::<f64>()
        / c as f64
}

/// Per-image SSIM over two `[N, C, H, W]` batches.
pub fn batch_ssim(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("batch_ssim", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let &[n, c, h, w] = a.shape() else {
        return Err(Error::shape("batch_ssim", format!("expected [N, C, H, W], got {:?}", a.shape())));
    };
    let (da, db) = (a.data(), b.data());
    let size = c * h * w;
    Ok((0..n).map(|i| ssim_slices(&da[i * size..(i + 1) * size], &db[i * size..(i + 1) * size], c, h, w)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        Tensor::uniform(shape, 0.0, 1.0, &mut seeded(seed, 0))
    }

    #[test]
    fn identity_is_exactly_one() {
        for shape in [[3, 32, 32], [1, 16, 16], [3, 8, 5]] {
            let x = random(&shape, 1);
            assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        }
    }

    #[test]
    fn constant_images_match_the_closed_form() {
        let a = Tensor::zeros(&[3, 16, 16]);
        let b = Tensor::ones(&[3, 16, 16]);
        let expected = C1 / (1.0 + C1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 9.999e-5).abs() < 1e-8);
    }

    #[test]
    fn single_pixel_change_lowers_the_score() {
        let a = random(&[3, 16, 16], 4);
        let mut v = a.to_vec();
        v[100] = 1.0 - v[100];
        let b = Tensor::new(a.shape(), v).unwrap();
        assert!(ssim(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn taps_are_normalized() {
        for len in [1, 4, 11] {
            assert!((taps(len).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(ssim(&Tensor::zeros(&[3, 8, 8]), &Tensor::zeros(&[3, 8, 9])).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(seed in 0u64..1000, h in 4usize..20, w in 4usize..20) {
            let a = random(&[2, h, w], seed);
            let b = random(&[2, h, w], seed + 5000);
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
