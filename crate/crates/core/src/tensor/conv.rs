//! Batched 2-d cross-correlation and its adjoint, lowered to GEMM through
//! im2col/col2im.

use super::linalg::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Output extent of a strided, zero-padded convolution, if positive.
pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

/// Output extent of the transposed convolution. `output_padding` must be
/// smaller than the stride, otherwise the result is not the adjoint of any
/// forward convolution geometry.
pub fn conv_transpose2d_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    if stride == 0 || input == 0 || output_padding >= stride {
        return None;
    }
    let full = (input - 1) * stride + kernel + output_padding;
    (full > 2 * padding).then(|| full - 2 * padding)
}

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn image(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Valid output positions `lo..hi` along one axis for kernel offset `k`:
/// those whose input index `o * stride + k - padding` lies in `0..len`.
fn valid_range(k: usize, len: usize, out: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    let hi = if len + padding > k { ((len + padding - k - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds one image into columns `offset..offset + out_h * out_w` of a
/// row-major `[rows, ld]` matrix.
fn im2col(x: &[f64], g: &Geometry, cols: &mut [f64], ld: usize, offset: usize) {
    let plane_len = g.height * g.width;
    for c in 0..g.channels {
        let plane = &x[c * plane_len..(c + 1) * plane_len];
        for ki in 0..g.kh {
            let (y_lo, y_hi) = valid_range(ki, g.height, g.out_h, g.stride, g.padding);
            for kj in 0..g.kw {
                let (x_lo, x_hi) = valid_range(kj, g.width, g.out_w, g.stride, g.padding);
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ld + offset..row * ld + offset + g.out_h * g.out_w];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if oy < y_lo || oy >= y_hi {
                        line.fill(0.0);
                        continue;
                    }
                    let iy = oy * g.stride + ki - g.padding;
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    line[..x_lo].fill(0.0);
                    line[x_hi..].fill(0.0);
                    let start = x_lo * g.stride + kj - g.padding;
                    if g.stride == 1 {
                        line[x_lo..x_hi].copy_from_slice(&src[start..start + (x_hi - x_lo)]);
                    } else {
                        for (v, ix) in line[x_lo..x_hi].iter_mut().zip((start..).step_by(g.stride)) {
                            *v = src[ix];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into one image.
fn col2im(cols: &[f64], g: &Geometry, x: &mut [f64], ld: usize, offset: usize) {
    let plane_len = g.height * g.width;
    for c in 0..g.channels {
        let plane = &mut x[c * plane_len..(c + 1) * plane_len];
        for ki in 0..g.kh {
            let (y_lo, y_hi) = valid_range(ki, g.height, g.out_h, g.stride, g.padding);
            for kj in 0..g.kw {
                let (x_lo, x_hi) = valid_range(kj, g.width, g.out_w, g.stride, g.padding);
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ld + offset..row * ld + offset + g.out_h * g.out_w];
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ki - g.padding;
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let line = &src[oy * g.out_w + x_lo..oy * g.out_w + x_hi];
                    let start = x_lo * g.stride + kj - g.padding;
                    for (v, ix) in line.iter().zip((start..).step_by(g.stride)) {
                        dst[ix] += v;
                    }
                }
            }
        }
    }
}

/// `[N, F, L]` to `[F, N * L]`.
fn batch_to_rows(x: &[f64], n: usize, f: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        for c in 0..f {
            out[c * n * l + i * l..c * n * l + (i + 1) * l].copy_from_slice(&x[(i * f + c) * l..(i * f + c + 1) * l]);
        }
    }
    out
}

/// `[F, N * L]` to `[N, F, L]`.
fn rows_to_batch(x: &[f64], n: usize, f: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..n {
        for c in 0..f {
            out[(i * f + c) * l..(i * f + c + 1) * l].copy_from_slice(&x[c * n * l + i * l..c * n * l + (i + 1) * l]);
        }
    }
    out
}

fn dims4(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::shape(op, format!("expected a 4-d tensor, got {s:?}"))),
    }
}

/// Unfolds a whole batch into a `[rows, n * cols]` matrix.
fn unfold_batch(x: &[f64], n: usize, g: &Geometry) -> Vec<f64> {
    let ld = n * g.cols();
    let mut cols = vec![0.0; g.rows() * ld];
    for i in 0..n {
        im2col(&x[i * g.image()..(i + 1) * g.image()], g, &mut cols, ld, i * g.cols());
    }
    cols
}

fn fold_batch(cols: &[f64], n: usize, g: &Geometry) -> Vec<f64> {
    let ld = n * g.cols();
    let mut x = vec![0.0; n * g.image()];
    for i in 0..n {
        col2im(cols, g, &mut x[i * g.image()..(i + 1) * g.image()], ld, i * g.cols());
    }
    x
}

/// Cross-correlation of `x: [N, C, H, W]` with `k: [F, C, kh, kw]`, no bias.
///
/// The whole batch is unfolded into one matrix so each pass is a single
/// GEMM.
pub fn conv2d(x: &Tensor, k: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let [n, c, h, w] = dims4("conv2d", x)?;
    let [f, kc, kh, kw] = dims4("conv2d", k)?;
    if kc != c {
        return Err(Error::shape("conv2d", format!("input has {c} channels, kernel expects {kc}")));
    }
    let (Some(out_h), Some(out_w)) =
        (conv2d_output_size(h, kh, stride, padding), conv2d_output_size(w, kw, stride, padding))
    else {
        return Err(Error::contract(format!(
            "conv2d: {h}x{w} input, {kh}x{kw} kernel, stride {stride}, padding {padding} gives an empty output"
        )));
    };
    let g = Geometry { channels: c, height: h, width: w, kh, kw, stride, padding, out_h, out_w };
    let (rows, l) = (g.rows(), g.cols());
    let cols = unfold_batch(&x.data(), n, &g);
    let mut out_rows = vec![0.0; f * n * l];
    gemm(f, rows, n * l, 1.0, &k.data(), false, &cols, false, 0.0, &mut out_rows);
    let out = rows_to_batch(&out_rows, n, f, l);
    // The unfolded input is only needed for the kernel gradient.
    let saved = k.requires_grad().then_some(cols);
    Ok(Tensor::from_op(
        vec![n, f, out_h, out_w],
        out,
        vec![x.clone(), k.clone()],
        Box::new(move |grad, _, parents| {
            let go = batch_to_rows(grad, n, f, l);
            let gx = parents[0].requires_grad().then(|| {
                let mut dcols = vec![0.0; rows * n * l];
                gemm(rows, f, n * l, 1.0, &parents[1].data(), true, &go, false, 0.0, &mut dcols);
                fold_batch(&dcols, n, &g)
            });
            let gk = parents[1].requires_grad().then(|| {
                let recomputed;
                let cols = match &saved {
                    Some(c) => c,
                    None => {
                        recomputed = unfold_batch(&parents[0].data(), n, &g);
                        &recomputed
                    }
                };
                let mut gk = vec![0.0; f * rows];
                gemm(f, n * l, rows, 1.0, &go, false, cols, true, 0.0, &mut gk);
                gk
            });
            vec![gx, gk]
        }),
    ))
}

/// Adjoint of [`conv2d`]: maps `x: [N, F, H, W]` through `k: [F, C, kh, kw]`
/// to `[N, C, H', W']` with `H' = (H - 1) * stride - 2 * padding + kh + output_padding`.
pub fn conv_transpose2d(
    x: &Tensor,
    k: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor> {
    let [n, f, h, w] = dims4("conv_transpose2d", x)?;
    let [kf, c, kh, kw] = dims4("conv_transpose2d", k)?;
    if kf != f {
        return Err(Error::shape("conv_transpose2d", format!("input has {f} channels, kernel expects {kf}")));
    }
    let (Some(out_h), Some(out_w)) = (
        conv_transpose2d_output_size(h, kh, stride, padding, output_padding),
        conv_transpose2d_output_size(w, kw, stride, padding, output_padding),
    ) else {
        return Err(Error::contract(format!(
            "conv_transpose2d: stride {stride}, padding {padding}, output padding {output_padding} cannot invert a convolution onto {h}x{w}"
        )));
    };
    // Geometry of the forward convolution this op is the adjoint of.
    let g = Geometry { channels: c, height: out_h, width: out_w, kh, kw, stride, padding, out_h: h, out_w: w };
    let (rows, l) = (g.rows(), g.cols());
    let x_rows = batch_to_rows(&x.data(), n, f, l);
    let mut cols = vec![0.0; rows * n * l];
    gemm(rows, f, n * l, 1.0, &k.data(), true, &x_rows, false, 0.0, &mut cols);
    let out = fold_batch(&cols, n, &g);
    let saved = k.requires_grad().then_some(x_rows);
    Ok(Tensor::from_op(
        vec![n, c, out_h, out_w],
        out,
        vec![x.clone(), k.clone()],
        Box::new(move |grad, _, parents| {
            let dcols = unfold_batch(grad, n, &g);
            let gx = parents[0].requires_grad().then(|| {
                let mut gx_rows = vec![0.0; f * n * l];
                gemm(f, rows, n * l, 1.0, &parents[1].data(), false, &dcols, false, 0.0, &mut gx_rows);
                rows_to_batch(&gx_rows, n, f, l)
            });
            let gk = parents[1].requires_grad().then(|| {
                let recomputed;
                let x_rows = match &saved {
                    Some(r) => r,
                    None => {
                        recomputed = batch_to_rows(&parents[0].data(), n, f, l);
                        &recomputed
                    }
                };
                let mut gk = vec![0.0; f * rows];
                gemm(f, n * l, rows, 1.0, x_rows, false, &dcols, true, 0.0, &mut gk);
                gk
            });
            vec![gx, gk]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::from_slice(&[1, 1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        let k = Tensor::ones(&[1, 1, 1, 1]);
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap().to_vec(), x.to_vec());
        assert_eq!(conv_transpose2d(&x, &k, 1, 0, 0).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn strided_shapes() {
        let mut rng = seeded(1, 0);
        let x = Tensor::randn(&[1, 3, 64, 64], 1.0, &mut rng);
        let k = Tensor::randn(&[8, 3, 4, 4], 1.0, &mut rng);
        assert_eq!(conv2d(&x, &k, 4, 0).unwrap().shape(), &[1, 8, 16, 16]);
        let u = Tensor::randn(&[1, 8, 16, 16], 1.0, &mut rng);
        assert_eq!(conv_transpose2d(&u, &k, 4, 0, 0).unwrap().shape(), &[1, 3, 64, 64]);
    }

    #[test]
    fn empty_output_is_a_contract_violation() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(matches!(conv2d(&x, &k, 1, 0), Err(Error::Contract(_))));
        let u = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(conv_transpose2d(&u, &k, 2, 0, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let x = Tensor::zeros(&[1, 2, 5, 5]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &k, 1, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn valid_ranges() {
        // 4 taps, stride 2, padding 1 over 8 inputs -> 4 outputs
        assert_eq!(valid_range(0, 8, 4, 2, 1), (1, 4));
        assert_eq!(valid_range(3, 8, 4, 2, 1), (0, 3));
        assert_eq!(valid_range(1, 8, 4, 2, 1), (0, 4));
        assert_eq!(valid_range(0, 1, 1, 2, 2), (1, 1));
    }

    #[test]
    fn output_size_helpers() {
        assert_eq!(conv2d_output_size(64, 4, 4, 0), Some(16));
        assert_eq!(conv2d_output_size(2, 4, 4, 1), Some(1));
        assert_eq!(conv2d_output_size(2, 4, 1, 0), None);
        assert_eq!(conv_transpose2d_output_size(1, 1, 4, 0, 3), Some(4));
        assert_eq!(conv_transpose2d_output_size(4, 4, 2, 1, 0), Some(8));
        assert_eq!(conv_transpose2d_output_size(4, 4, 2, 1, 2), None);
    }
}
