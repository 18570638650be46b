use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Per-channel batch normalization of `[N, C, ...]`.
///
/// In train mode the batch statistics (biased variance) normalize the input
/// and are blended into `running_mean`/`running_var` with weight `momentum`.
/// Eval mode applies the running statistics as a fixed affine map.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    mode: BatchNormMode,
    momentum: f64,
    eps: f64,
) -> Result<Tensor> {
    let shape = x.shape().to_vec();
    if shape.len() < 2 {
        return Err(Error::shape("batch_norm", format!("expected [N, C, ...], got {shape:?}")));
    }
    let (n, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    for (name, t) in [("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)] {
        if t.shape() != [c] {
            return Err(Error::shape("batch_norm", format!("{name} has shape {:?}, expected [{c}]", t.shape())));
        }
    }
    let count = (n * inner) as f64;
    let at = move |i: usize, ch: usize, j: usize| (i * c + ch) * inner + j;

    match mode {
        BatchNormMode::Train => {
            if n < 2 {
                return Err(Error::contract(format!("batch_norm in train mode needs N >= 2, got {n}")));
            }
            let xd = x.data();
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..inner {
                        s += xd[at(i, ch, j)];
                    }
                }
                let m = s / count;
                let mut v = 0.0;
                for i in 0..n {
                    for j in 0..inner {
                        let d = xd[at(i, ch, j)] - m;
                        v += d * d;
                    }
                }
                mean[ch] = m;
                var[ch] = v / count;
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut xhat = vec![0.0; xd.len()];
            let mut out = vec![0.0; xd.len()];
            {
                let (gd, bd) = (gamma.data(), beta.data());
                for i in 0..n {
                    for ch in 0..c {
                        for j in 0..inner {
                            let idx = at(i, ch, j);
                            let h = (xd[idx] - mean[ch]) * inv_std[ch];
                            xhat[idx] = h;
                            out[idx] = gd[ch] * h + bd[ch];
                        }
                    }
                }
            }
            drop(xd);
            {
                let mut rm = running_mean.data_mut();
                let mut rv = running_var.data_mut();
                for ch in 0..c {
                    rm[ch] = (1.0 - momentum) * rm[ch] + momentum * mean[ch];
                    rv[ch] = (1.0 - momentum) * rv[ch] + momentum * var[ch];
                }
            }
            Ok(Tensor::from_op(
                shape,
                out,
                vec![x.clone(), gamma.clone(), beta.clone()],
                Box::new(move |g, _, parents| {
                    let gd = parents[1].data();
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for i in 0..n {
                        for ch in 0..c {
                            for j in 0..inner {
                                let idx = at(i, ch, j);
                                dgamma[ch] += g[idx] * xhat[idx];
                                dbeta[ch] += g[idx];
                            }
                        }
                    }
                    let dx = parents[0].requires_grad().then(|| {
                        let mut dx = vec![0.0; g.len()];
                        for ch in 0..c {
                            let k = gd[ch] * inv_std[ch] / count;
                            for i in 0..n {
                                for j in 0..inner {
                                    let idx = at(i, ch, j);
                                    dx[idx] = k * (count * g[idx] - dbeta[ch] - xhat[idx] * dgamma[ch]);
                                }
                            }
                        }
                        dx
                    });
                    vec![dx, Some(dgamma), Some(dbeta)]
                }),
            ))
        }
        BatchNormMode::Eval => {
            let (rm, rv) = (running_mean.to_vec(), running_var.to_vec());
            let inv_std: Vec<f64> = rv.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let xd = x.data();
            let (gd, bd) = (gamma.data(), beta.data());
            let mut out = vec![0.0; xd.len()];
            for i in 0..n {
                for ch in 0..c {
                    for j in 0..inner {
                        let idx = at(i, ch, j);
                        out[idx] = gd[ch] * (xd[idx] - rm[ch]) * inv_std[ch] + bd[ch];
                    }
                }
            }
            drop((xd, gd, bd));
            Ok(Tensor::from_op(
                shape,
                out,
                vec![x.clone(), gamma.clone(), beta.clone()],
                Box::new(move |g, _, parents| {
                    let xd = parents[0].data();
                    let gd = parents[1].data();
                    let mut dx = vec![0.0; g.len()];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for i in 0..n {
                        for ch in 0..c {
                            for j in 0..inner {
                                let idx = at(i, ch, j);
                                dx[idx] = g[idx] * gd[ch] * inv_std[ch];
                                dgamma[ch] += g[idx] * (xd[idx] - rm[ch]) * inv_std[ch];
                                dbeta[ch] += g[idx];
                            }
                        }
                    }
                    vec![Some(dx), Some(dgamma), Some(dbeta)]
                }),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn stats() -> (Tensor, Tensor) {
        (Tensor::zeros(&[2]), Tensor::ones(&[2]))
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor::full(&[3, 2, 2, 2], 5.0);
        let gamma = Tensor::ones(&[2]);
        let beta = Tensor::from_slice(&[2], &[0.25, -1.0]).unwrap();
        let (rm, rv) = stats();
        let y = batch_norm(&x, &gamma, &beta, &rm, &rv, BatchNormMode::Train, 0.1, 1e-5).unwrap();
        for (i, v) in y.to_vec().iter().enumerate() {
            let expected = if (i / 4) % 2 == 0 { 0.25 } else { -1.0 };
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_standardizes() {
        let mut rng = seeded(3, 0);
        let x = Tensor::randn(&[4, 2, 3, 3], 2.0, &mut rng).add_scalar(1.5);
        let (rm, rv) = stats();
        let y = batch_norm(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), &rm, &rv, BatchNormMode::Train, 0.1, 0.0)
            .unwrap()
            .to_vec();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4).flat_map(|i| y[(i * 2 + ch) * 9..(i * 2 + ch + 1) * 9].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-6);
        }
        assert!(rm.to_vec().iter().all(|m| m.abs() > 0.0));
    }

    #[test]
    fn single_sample_train_is_rejected() {
        let (rm, rv) = stats();
        let r = batch_norm(
            &Tensor::zeros(&[1, 2, 2, 2]),
            &Tensor::ones(&[2]),
            &Tensor::zeros(&[2]),
            &rm,
            &rv,
            BatchNormMode::Train,
            0.1,
            1e-5,
        );
        assert!(matches!(r, Err(Error::Contract(_))));
        let ok = batch_norm(
            &Tensor::zeros(&[1, 2, 2, 2]),
            &Tensor::ones(&[2]),
            &Tensor::zeros(&[2]),
            &rm,
            &rv,
            BatchNormMode::Eval,
            0.1,
            1e-5,
        );
        assert!(ok.is_ok());
    }
}
