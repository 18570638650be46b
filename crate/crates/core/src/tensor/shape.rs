use super::Tensor;
use crate::error::{Error, Result};

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape())));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }

    /// `[N, ...] -> [N, prod(...)]`
    pub fn flatten_batch(&self) -> Result<Tensor> {
        let n = *self.shape().first().ok_or_else(|| Error::shape("flatten", "scalar input"))?;
        self.reshape(&[n, self.numel() / n])
    }

    /// Transpose of a 2-d tensor.
    pub fn t(&self) -> Result<Tensor> {
        let &[r, c] = self.shape() else {
            return Err(Error::shape("transpose", format!("expected 2-d, got {:?}", self.shape())));
        };
        let out = transpose_buf(&self.data(), r, c);
        Ok(Tensor::from_op(
            vec![c, r],
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(transpose_buf(g, c, r))]),
        ))
    }

    /// Concatenates `[N, C1, ...]` and `[N, C2, ...]` along the channel axis.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() < 2 || a.len() != b.len() || a[0] != b[0] || a[2..] != b[2..] {
            return Err(Error::shape("concat_channels", format!("{a:?} vs {b:?}")));
        }
        let n = a[0];
        let inner: usize = a[2..].iter().product();
        let (ca, cb) = (a[1] * inner, b[1] * inner);
        let mut shape = a.to_vec();
        shape[1] = a[1] + b[1];
        let mut out = Vec::with_capacity(n * (ca + cb));
        {
            let (da, db) = (self.data(), other.data());
            for i in 0..n {
                out.extend_from_slice(&da[i * ca..(i + 1) * ca]);
                out.extend_from_slice(&db[i * cb..(i + 1) * cb]);
            }
        }
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _, parents| {
                let stride = ca + cb;
                let ga = parents[0]
                    .requires_grad()
                    .then(|| (0..n).flat_map(|i| g[i * stride..i * stride + ca].iter().copied()).collect());
                let gb = parents[1]
                    .requires_grad()
                    .then(|| (0..n).flat_map(|i| g[i * stride + ca..(i + 1) * stride].iter().copied()).collect());
                vec![ga, gb]
            }),
        ))
    }

    /// Concatenates along the batch axis.
    pub fn concat_batch(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.is_empty() || a.len() != b.len() || a[1..] != b[1..] {
            return Err(Error::shape("concat_batch", format!("{a:?} vs {b:?}")));
        }
        let split = self.numel();
        let mut shape = a.to_vec();
        shape[0] += b[0];
        let mut out = self.to_vec();
        out.extend_from_slice(&other.data());
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _, _| vec![Some(g[..split].to_vec()), Some(g[split..].to_vec())]),
        ))
    }

    /// Rows `start..start + len` of the batch axis.
    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if shape.is_empty() || len == 0 || start + len > shape[0] {
            return Err(Error::shape("slice_batch", format!("{start}+{len} out of {shape:?}")));
        }
        let row: usize = shape[1..].iter().product();
        let total = self.numel();
        let mut out_shape = shape.to_vec();
        out_shape[0] = len;
        let out = self.data()[start * row..(start + len) * row].to_vec();
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut full = vec![0.0; total];
                full[start * row..(start + len) * row].copy_from_slice(g);
                vec![Some(full)]
            }),
        ))
    }

    /// Adds `bias[c]` to every element of channel `c` of `[N, C, ...]`.
    pub fn add_channel_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() < 2 || bias.shape() != [shape[1]] {
            return Err(Error::shape("add_channel_bias", format!("{shape:?} with bias {:?}", bias.shape())));
        }
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let mut out = self.to_vec();
        {
            let b = bias.data();
            for (i, chunk) in out.chunks_mut(inner).enumerate() {
                let bc = b[i % c];
                chunk.iter_mut().for_each(|v| *v += bc);
            }
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, _, parents| {
                let gb = parents[1].requires_grad().then(|| {
                    let mut gb = vec![0.0; c];
                    for (i, chunk) in g.chunks(inner).enumerate() {
                        gb[i % c] += chunk.iter().sum::<f64>();
                    }
                    gb
                });
                vec![Some(g.to_vec()), gb]
            }),
        ))
    }
}

pub(crate) fn transpose_buf(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}
