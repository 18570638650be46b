use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Operand {
    Same,
    LeftScalar,
    RightScalar,
}

fn pair_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Operand, Vec<usize>)> {
    if a.shape() == b.shape() {
        Ok((Operand::Same, a.shape().to_vec()))
    } else if b.numel() == 1 {
        Ok((Operand::RightScalar, a.shape().to_vec()))
    } else if a.numel() == 1 {
        Ok((Operand::LeftScalar, b.shape().to_vec()))
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

/// Reduces a full-size gradient to the operand's size (sums when the operand
/// was a broadcast scalar).
fn reduce_to(g: Vec<f64>, scalar: bool) -> Vec<f64> {
    if scalar {
        vec![g.iter().sum()]
    } else {
        g
    }
}

impl Tensor {
    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        // partial derivatives (d/da, d/db) evaluated at (a, b)
        df: fn(f64, f64) -> (f64, f64),
    ) -> Result<Tensor> {
        let (mode, shape) = pair_shape(op, self, other)?;
        let a = self.data();
        let b = other.data();
        let n = shape.iter().product::<usize>();
        let at = |i: usize| match mode {
            Operand::LeftScalar => a[0],
            _ => a[i],
        };
        let bt = |i: usize| match mode {
            Operand::RightScalar => b[0],
            _ => b[i],
        };
        let data: Vec<f64> = (0..n).map(|i| f(at(i), bt(i))).collect();
        drop((a, b));
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _out, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                let at = |i: usize| match mode {
                    Operand::LeftScalar => a[0],
                    _ => a[i],
                };
                let bt = |i: usize| match mode {
                    Operand::RightScalar => b[0],
                    _ => b[i],
                };
                let mut ga = parents[0].requires_grad().then(|| vec![0.0; g.len()]);
                let mut gb = parents[1].requires_grad().then(|| vec![0.0; g.len()]);
                for (i, &gi) in g.iter().enumerate() {
                    let (da, db) = df(at(i), bt(i));
                    if let Some(ga) = ga.as_mut() {
                        ga[i] = gi * da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[i] = gi * db;
                    }
                }
                vec![
                    ga.map(|v| reduce_to(v, matches!(mode, Operand::LeftScalar))),
                    gb.map(|v| reduce_to(v, matches!(mode, Operand::RightScalar))),
                ]
            }),
        ))
    }

    /// Elementwise op whose derivative is computed from the input value `x`
    /// and the output value `y`.
    fn unary(&self, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, out, parents| {
                let x = parents[0].data();
                vec![Some(g.iter().zip(x.iter().zip(out)).map(|(gi, (&xi, &yi))| gi * df(xi, yi)).collect())]
            }),
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |_, _| (1.0, 1.0))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |_, _| (1.0, -1.0))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.iter().map(|gi| gi * c).collect())]),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, |x, _| sign(x))
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(bad) = self.data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain { op: "log", detail: format!("non-positive input {bad}") });
        }
        Ok(self.unary(f64::ln, |x, _| 1.0 / x))
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| if x > 0.0 { x } else { slope * x }).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _, parents| {
                let x = parents[0].data();
                vec![Some(g.iter().zip(x.iter()).map(|(gi, &xi)| if xi > 0.0 { *gi } else { gi * slope }).collect())]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    /// `log(1 + e^x)` evaluated without overflow.
    pub fn softplus(&self) -> Tensor {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    /// Piecewise constant, so its gradient is zero everywhere it exists.
    pub fn sign(&self) -> Tensor {
        self.unary(sign, |_, _| 0.0)
    }

    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(Vec::new(), vec![total], vec![self.clone()], Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let total: f64 = self.data().iter().sum();
        let inv = 1.0 / n as f64;
        Tensor::from_op(
            Vec::new(),
            vec![total * inv],
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0] * inv; n])]),
        )
    }
}

pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_slice(shape, v).unwrap()
    }

    #[test]
    fn add_and_leaky_relu_values() {
        let s = t(&[2], &[1.0, 2.0]).add(&t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(s.to_vec(), vec![4.0, 6.0]);
        let l = t(&[2], &[-1.0, 2.0]).leaky_relu(0.2);
        assert_eq!(l.to_vec(), vec![-0.2, 2.0]);
    }

    #[test]
    fn scalar_operand_broadcasts_and_reduces() {
        let a = t(&[3], &[1.0, 2.0, 3.0]).requires_grad_(true).unwrap();
        let c = Tensor::scalar(2.0).requires_grad_(true).unwrap();
        let y = a.mul(&c).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 4.0, 6.0]);
        y.sum().backward().unwrap();
        assert_eq!(c.grad().unwrap(), vec![6.0]);
        assert_eq!(a.grad().unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let r = t(&[2], &[1.0, 2.0]).add(&t(&[3], &[1.0, 2.0, 3.0]));
        assert!(matches!(r, Err(Error::Shape { op: "add", .. })));
    }

    #[test]
    fn log_rejects_non_positive() {
        assert!(matches!(t(&[2], &[1.0, 0.0]).log(), Err(Error::Domain { .. })));
        assert!(t(&[1], &[2.0]).log().is_ok());
    }

    #[test]
    fn exp_derivative_matches_central_difference() {
        let x = Tensor::scalar(0.0).requires_grad_(true).unwrap();
        x.exp().backward().unwrap();
        let h: f64 = 1e-5;
        let fd = (h.exp() - (-h).exp()) / (2.0 * h);
        assert!((x.grad().unwrap()[0] - fd).abs() < 1e-8);
        assert_eq!(x.grad().unwrap()[0], 1.0);
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(t(&[3], &[-0.5, 0.0, 2.0]).sign().to_vec(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn softplus_is_stable() {
        let y = t(&[3], &[-800.0, 0.0, 800.0]).softplus().to_vec();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(y[2], 800.0);
    }

    #[test]
    fn mean_gradient() {
        let x = t(&[4], &[1.0, 2.0, 3.0, 4.0]).requires_grad_(true).unwrap();
        let m = x.mean();
        assert_eq!(m.item(), 2.5);
        m.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);
    }
}
