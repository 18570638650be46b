//! PCA subspaces and the linear two-pathway generator.
//!
//! A linear autoencoder `Y -> U_D U_E Y` and a linear regressor
//! `S -> U_D,G U_E,G S` whose decoder is the same matrix: every regression
//! output lies in the column space of `U_D`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PcaDim {
    Fixed(usize),
    /// Smallest dimension whose components explain at least this fraction
    /// of the variance.
    Variance(f64),
}

/// Principal subspace of row-sample data.
#[derive(Clone, Debug)]
pub struct Pca {
    /// `[1, d]`
    pub mean: DMatrix<f64>,
    /// `[k, d]` with orthonormal rows.
    pub components: DMatrix<f64>,
    /// All singular values of the centred data, descending.
    pub singular_values: Vec<f64>,
}

pub fn to_matrix(t: &Tensor) -> Result<DMatrix<f64>> {
    let &[n, d] = t.shape() else {
        return Err(Error::shape("to_matrix", format!("expected [N, D], got {:?}", t.shape())));
    };
    Ok(DMatrix::from_row_slice(n, d, &t.data()))
}

pub fn from_matrix(m: &DMatrix<f64>) -> Tensor {
    let data: Vec<f64> = m.transpose().iter().copied().collect();
    Tensor::new(&[m.nrows(), m.ncols()], data).expect("matrix dimensions match")
}

/// Fits a PCA to `data: [n, d]`. Asking for more components than the data
/// has non-negligible directions is an error.
pub fn pca_fit(data: &DMatrix<f64>, dim: PcaDim) -> Result<Pca> {
    let (n, d) = data.shape();
    if n < 2 || d == 0 {
        return Err(Error::contract(format!("PCA needs at least two samples, got {n}x{d}")));
    }
    let mean = DMatrix::from_fn(1, d, |_, j| data.column(j).mean());
    let centred = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[(0, j)]);
    let svd = centred.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::contract("SVD did not return right singular vectors"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let top = singular_values.first().copied().unwrap_or(0.0);
    let tol = top * f64::EPSILON * n.max(d) as f64;
    let rank = singular_values.iter().filter(|&&s| s > tol).count();
    let k = match dim {
        PcaDim::Fixed(k) => k,
        PcaDim::Variance(fraction) => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::contract(format!("variance fraction {fraction} outside (0, 1]")));
            }
            let total: f64 = singular_values.iter().map(|s| s * s).sum();
            let mut acc = 0.0;
            1 + singular_values
                .iter()
                .position(|s| {
                    acc += s * s;
                    acc >= fraction * total * (1.0 - 1e-12)
                })
                .unwrap_or(rank.saturating_sub(1))
        }
    };
    if k == 0 || k > rank {
        return Err(Error::contract(format!("requested {k} components, data has rank {rank}")));
    }
    let components = DMatrix::from_fn(k, d, |i, j| v_t[(order[i], j)]);
    Ok(Pca { mean, components, singular_values })
}

impl Pca {
    pub fn dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn explained_variance(&self) -> f64 {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        if total == 0.0 {
            return 1.0;
        }
        self.singular_values[..self.dim()].iter().map(|s| s * s).sum::<f64>() / total
    }

    fn centred(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - self.mean[(0, j)])
    }

    /// `[n, d]` to `[n, k]` coordinates.
    pub fn encode(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.centred(x) * self.components.transpose()
    }

    /// `[n, k]` coordinates back to `[n, d]`.
    pub fn decode(&self, codes: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = codes * &self.components;
        for mut row in out.row_iter_mut() {
            row += &self.mean;
        }
        out
    }

    /// Orthogonal projection onto the affine principal subspace.
    pub fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.decode(&self.encode(x))
    }
}

/// Linear encoders and decoders of both pathways, stored as `[rows, cols]`
/// tensors acting on column vectors.
#[derive(Clone)]
pub struct LinearPathway {
    /// `[k, d_y]`
    pub u_e: Tensor,
    /// `[d_y, k]`
    pub u_d: Tensor,
    /// `[k, d_s]`
    pub u_e_g: Tensor,
    /// `[d_y, k]`; the same tensor as `u_d` when shared.
    pub u_d_g: Tensor,
}

impl LinearPathway {
    pub fn shared(u_e: Tensor, u_d: Tensor, u_e_g: Tensor) -> Result<Self> {
        let u_d_g = u_d.clone();
        Self::unshared(u_e, u_d, u_e_g, u_d_g)
    }

    pub fn unshared(u_e: Tensor, u_d: Tensor, u_e_g: Tensor, u_d_g: Tensor) -> Result<Self> {
        let (k, d_y) = match *u_e.shape() {
            [k, d] => (k, d),
            ref s => return Err(Error::shape("LinearPathway", format!("U_E is {s:?}"))),
        };
        let k_g = u_e_g.shape().first().copied().unwrap_or(0);
        if u_d.shape() != [d_y, k] || u_d_g.shape() != [d_y, k] || u_e_g.ndim() != 2 || k_g != k {
            return Err(Error::shape(
                "LinearPathway",
                format!(
                    "U_E {:?}, U_D {:?}, U_E,G {:?}, U_D,G {:?}",
                    u_e.shape(),
                    u_d.shape(),
                    u_e_g.shape(),
                    u_d_g.shape()
                ),
            ));
        }
        Ok(Self { u_e, u_d, u_e_g, u_d_g })
    }

    /// Autoencoder tied to a PCA (`U_E = V`, `U_D = V^T`) with a random
    /// regression encoder for `d_s`-dimensional sources.
    pub fn from_pca(pca: &Pca, d_s: usize, rng: &mut impl Rng) -> Result<Self> {
        let v = from_matrix(&pca.components);
        let u_d = v.t()?.detach();
        let u_e_g = Tensor::randn(&[pca.dim(), d_s], 1.0 / (d_s as f64).sqrt(), rng);
        Self::shared(v, u_d, u_e_g)
    }

    pub fn is_shared(&self) -> bool {
        self.u_d.ptr_eq(&self.u_d_g)
    }

    /// Regression outputs for row samples `s: [n, d_s]`.
    pub fn reg(&self, s: &Tensor) -> Result<Tensor> {
        s.matmul(&self.u_e_g.t()?)?.matmul(&self.u_d_g.t()?)
    }

    pub fn ae(&self, y: &Tensor) -> Result<Tensor> {
        y.matmul(&self.u_e.t()?)?.matmul(&self.u_d.t()?)
    }

    /// Largest entry of the residual of `outputs: [n, d_y]` after
    /// projection onto the column space of `U_D`, via a QR factorization.
    pub fn decoder_residual(&self, outputs: &Tensor) -> Result<f64> {
        let q = to_matrix(&self.u_d)?.qr().q();
        let y = to_matrix(outputs)?;
        let residual = &y - (&y * &q) * q.transpose();
        Ok(residual.amax())
    }
}

/// Box-filter downscale by `factor` followed by bilinear upscaling back to
/// the original size, per channel of a `[C, H, W]` image.
pub fn downscale_upscale(img: &[f64], channels: usize, side: usize, factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || !side.is_multiple_of(factor) || img.len() != channels * side * side {
        return Err(Error::contract(format!("cannot downscale a {side}x{side} image by {factor}")));
    }
    let small = side / factor;
    let mut out = vec![0.0; img.len()];
    for c in 0..channels {
        let plane = &img[c * side * side..(c + 1) * side * side];
        let mut low = vec![0.0; small * small];
        for (idx, v) in low.iter_mut().enumerate() {
            let (i, j) = (idx / small, idx % small);
            let mut acc = 0.0;
            for di in 0..factor {
                for dj in 0..factor {
                    acc += plane[(i * factor + di) * side + j * factor + dj];
                }
            }
            *v = acc / (factor * factor) as f64;
        }
        let coord = |p: usize| {
            let t = ((p as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (small - 1) as f64);
            let lo = t.floor() as usize;
            (lo, (lo + 1).min(small - 1), t - lo as f64)
        };
        for i in 0..side {
            let (y0, y1, fy) = coord(i);
            for j in 0..side {
                let (x0, x1, fx) = coord(j);
                let top = low[y0 * small + x0] * (1.0 - fx) + low[y0 * small + x1] * fx;
                let bottom = low[y1 * small + x0] * (1.0 - fx) + low[y1 * small + x1] * fx;
                out[c * side * side + i * side + j] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalogyReport {
    pub pca_dim: usize,
    pub explained_variance: f64,
    /// Mean `||x - x~||` over the probes, `x~` the degraded image.
    pub d_ambient: f64,
    /// Mean `||P(x) - P(x~)||`.
    pub d_subspace: f64,
    /// Largest entry of `P(P(x)) - P(x)`.
    pub idempotence_error: f64,
    /// Largest residual of shared-decoder regression outputs against the
    /// decoder column space.
    pub decoder_residual: f64,
}

/// Fits a PCA on `train`, degrades each probe by downscaling by 4 and
/// upscaling bilinearly, and compares distances before and after
/// projection.
pub fn linear_analogy_demo(
    train: &ImageDataset,
    probes: &ImageDataset,
    dim: PcaDim,
    seed: u64,
) -> Result<AnalogyReport> {
    if probes.is_empty() {
        return Err(Error::contract("linear analogy demo needs at least one probe image"));
    }
    let pca = pca_fit(&to_matrix(&train.all()?.flatten_batch()?)?, dim)?;
    let d = pca.components.ncols();
    let clean = to_matrix(&probes.all()?.flatten_batch()?)?;
    let mut degraded = clean.clone();
    for i in 0..probes.len() {
        let low = downscale_upscale(probes.image(i), 3, probes.side, 4)?;
        degraded.row_mut(i).copy_from_slice(&low);
    }
    let (p_clean, p_degraded) = (pca.project(&clean), pca.project(&degraded));
    let n = probes.len() as f64;
    let d_ambient = (0..probes.len()).map(|i| (clean.row(i) - degraded.row(i)).norm()).sum::<f64>() / n;
    let d_subspace = (0..probes.len()).map(|i| (p_clean.row(i) - p_degraded.row(i)).norm()).sum::<f64>() / n;
    let idempotence_error = (pca.project(&p_degraded) - &p_degraded).amax();

    let mut rng = seeded(seed, 0);
    let pathway = LinearPathway::from_pca(&pca, d, &mut rng)?;
    let outputs = pathway.reg(&from_matrix(&degraded))?;
    let decoder_residual = pathway.decoder_residual(&outputs)?;
    Ok(AnalogyReport {
        pca_dim: pca.dim(),
        explained_variance: pca.explained_variance(),
        d_ambient,
        d_subspace,
        idempotence_error,
        decoder_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_procedural_images;
    use proptest::prelude::*;

    fn random_data(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        to_matrix(&Tensor::randn(&[n, d], 1.0, &mut seeded(seed, 0))).unwrap()
    }

    #[test]
    fn line_in_the_plane_is_captured_by_one_component() {
        let data = DMatrix::from_fn(20, 2, |i, j| (i as f64 - 7.0) * if j == 0 { 2.0 } else { -1.0 } + 0.5);
        let pca = pca_fit(&data, PcaDim::Fixed(1)).unwrap();
        assert!((pca.explained_variance() - 1.0).abs() < 1e-12);
        assert!((pca.project(&data) - &data).amax() < 1e-12);
        assert_eq!(pca_fit(&data, PcaDim::Variance(0.9)).unwrap().dim(), 1);
        assert!(pca_fit(&data, PcaDim::Fixed(2)).is_err());
    }

    #[test]
    fn reconstruction_error_does_not_increase_with_dimension() {
        let data = random_data(30, 6, 1);
        let errors: Vec<f64> =
            (1..=6).map(|k| (pca_fit(&data, PcaDim::Fixed(k)).unwrap().project(&data) - &data).norm()).collect();
        assert!(errors.windows(2).all(|w| w[1] <= w[0] + 1e-10), "{errors:?}");
        assert!(errors[5] < 1e-10);
    }

    #[test]
    fn shared_decoder_outputs_stay_in_its_column_space() {
        let pca = pca_fit(&random_data(40, 8, 2), PcaDim::Fixed(3)).unwrap();
        let lp = LinearPathway::from_pca(&pca, 5, &mut seeded(4, 0)).unwrap();
        assert!(lp.is_shared());
        let s = Tensor::randn(&[10, 5], 3.0, &mut seeded(5, 0));
        assert!(lp.decoder_residual(&lp.reg(&s).unwrap()).unwrap() <= 1e-10);
        let other = Tensor::randn(&[8, 3], 1.0, &mut seeded(6, 0));
        let loose = LinearPathway::unshared(lp.u_e.clone(), lp.u_d.clone(), lp.u_e_g.clone(), other).unwrap();
        assert!(!loose.is_shared());
        assert!(loose.decoder_residual(&loose.reg(&s).unwrap()).unwrap() > 1e-3);
    }

    #[test]
    fn upscaling_a_constant_image_is_exact() {
        let img = vec![0.25; 3 * 16 * 16];
        assert_eq!(downscale_upscale(&img, 3, 16, 4).unwrap(), img);
        assert!(downscale_upscale(&img, 3, 16, 3).is_err());
    }

    #[test]
    fn projection_brings_degraded_images_closer() {
        let train = gen_procedural_images(300, 16, 1).unwrap();
        let probes = gen_procedural_images(310, 16, 1).unwrap().subset(300..310);
        let r = linear_analogy_demo(&train, &probes, PcaDim::Variance(0.9), 0).unwrap();
        assert!(r.explained_variance >= 0.9);
        assert!(r.d_subspace < r.d_ambient);
        assert!(r.idempotence_error < 1e-10);
        assert!(r.decoder_residual < 1e-10);
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(seed in 0u64..200, k in 1usize..5) {
            let data = random_data(12, 6, seed);
            let pca = pca_fit(&data, PcaDim::Fixed(k)).unwrap();
            let p = pca.project(&random_data(4, 6, seed + 1000));
            prop_assert!((pca.project(&p) - &p).amax() < 1e-10);
        }
    }
}
