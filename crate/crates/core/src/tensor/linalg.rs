use super::Tensor;
use crate::error::{Error, Result};

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers, where `op(a)`
/// is `m x k` (stored `k x m` when `a_t`) and `op(b)` is `k x n` (stored
/// `n x k` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index touched by the kernel.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product of `[m, k]` and `[k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(Error::shape("matmul", format!("expected 2-d operands, got {:?} and {:?}", a.shape(), b.shape())));
    };
    if k != k2 {
        return Err(Error::shape("matmul", format!("inner dimensions {k} and {k2} differ")));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, 1.0, &a.data(), false, &b.data(), false, 0.0, &mut out);
    Ok(Tensor::from_op(
        vec![m, n],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _, parents| {
            let ga = parents[0].requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, 1.0, g, false, &parents[1].data(), true, 0.0, &mut ga);
                ga
            });
            let gb = parents[1].requires_grad().then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, 1.0, &parents[0].data(), true, g, false, 0.0, &mut gb);
                gb
            });
            vec![ga, gb]
        }),
    ))
}

impl Tensor {
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        matmul(self, other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_small_products() {
        let eye = Tensor::from_slice(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::from_slice(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(eye.matmul(&a).unwrap().to_vec(), a.to_vec());
        let row = Tensor::from_slice(&[1, 2], &[1.0, 2.0]).unwrap();
        let col = Tensor::from_slice(&[2, 1], &[3.0, 4.0]).unwrap();
        let p = row.matmul(&col).unwrap();
        assert_eq!(p.shape(), &[1, 1]);
        assert_eq!(p.to_vec(), vec![11.0]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Shape { op: "matmul", .. })));
    }

    #[test]
    fn gemm_transposed_operands() {
        // a^T stored as 3x2, b^T stored as 2x3
        let a_t = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let b_t = [1.0, 0.0, 2.0, 0.0, 1.0, 3.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, 1.0, &a_t, true, &b_t, true, 0.0, &mut c);
        // a = [[1,2,3],[4,5,6]], b = [[1,0],[0,1],[2,3]]
        assert_eq!(c, [7.0, 11.0, 16.0, 23.0]);
    }
}
