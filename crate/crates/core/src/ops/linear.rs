//! Fully-connected layer over the channel axis of `[N,1,1,1,C]` tensors.

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::param::{join, Param, Parameters};
use crate::real::{Real, Strides};
use crate::tensor::{Shape, Tensor};

/// Weight `[C_out, C_in]` and optional bias `[C_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<F> {
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
}

impl<F: Real> LinearParams<F> {
    pub fn zeros(c_out: usize, c_in: usize, bias: bool) -> Self {
        LinearParams { weight: Param::zeros(&[c_out, c_in]), bias: bias.then(|| Param::zeros(&[c_out])) }
    }

    /// Normal weights with the given std, zero bias.
    pub fn normal<R: Rng + ?Sized>(c_out: usize, c_in: usize, std: f64, bias: bool, rng: &mut R) -> Self {
        LinearParams { weight: Param::normal(&[c_out, c_in], std, rng), bias: bias.then(|| Param::zeros(&[c_out])) }
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape[1]
    }
}

impl<F: Real> Parameters<F> for LinearParams<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearGrads<F> {
    pub input: Tensor<F>,
    pub weight: Vec<F>,
    pub bias: Option<Vec<F>>,
}

fn check<F: Real>(x: &Tensor<F>, p: &LinearParams<F>) -> Result<()> {
    let s = x.shape();
    if s.volume() != 1 {
        return Err(dim_err!("fully_connected expects [N,1,1,1,C], got {s}"));
    }
    if s.c() != p.c_in() {
        return Err(dim_err!("fully_connected: input has {} channels, weight expects {}", s.c(), p.c_in()));
    }
    Ok(())
}

/// `out[n, o] = sum_i W[o, i] x[n, i] + b[o]`.
pub fn fully_connected<F: Real>(x: &Tensor<F>, p: &LinearParams<F>) -> Result<Tensor<F>> {
    check(x, p)?;
    let n = x.shape().n();
    let (c_out, c_in) = (p.c_out(), p.c_in());
    let mut out = Tensor::zeros(Shape::new(n, 1, 1, 1, c_out));
    if let Some(b) = &p.bias {
        for row in out.data_mut().chunks_exact_mut(c_out) {
            row.copy_from_slice(&b.value);
        }
    }
    F::gemm(
        n,
        c_in,
        c_out,
        F::one(),
        x.data(),
        Strides::row_major(c_in),
        &p.weight.value,
        Strides::transposed(c_in),
        F::one(),
        out.data_mut(),
        Strides::row_major(c_out),
    );
    Ok(out)
}

pub fn fully_connected_backward<F: Real>(
    x: &Tensor<F>,
    p: &LinearParams<F>,
    grad: &Tensor<F>,
) -> Result<LinearGrads<F>> {
    check(x, p)?;
    let n = x.shape().n();
    let (c_out, c_in) = (p.c_out(), p.c_in());
    if grad.shape() != Shape::new(n, 1, 1, 1, c_out) {
        return Err(dim_err!("fully_connected_backward: bad gradient shape {}", grad.shape()));
    }
    let mut input = Tensor::zeros(x.shape());
    F::gemm(
        n,
        c_out,
        c_in,
        F::one(),
        grad.data(),
        Strides::row_major(c_out),
        &p.weight.value,
        Strides::row_major(c_in),
        F::zero(),
        input.data_mut(),
        Strides::row_major(c_in),
    );
    let mut weight = vec![F::zero(); c_out * c_in];
    F::gemm(
        c_out,
        n,
        c_in,
        F::one(),
        grad.data(),
        Strides::transposed(c_out),
        x.data(),
        Strides::row_major(c_in),
        F::zero(),
        &mut weight,
        Strides::row_major(c_in),
    );
    let bias = p.bias.as_ref().map(|_| {
        let mut b = vec![F::zero(); c_out];
        for row in grad.data().chunks_exact(c_out) {
            for (acc, &g) in b.iter_mut().zip(row) {
                *acc += g;
            }
        }
        b
    });
    Ok(LinearGrads { input, weight, bias })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_input(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn identity_weight_passes_input() {
        let mut p = LinearParams::<f64>::zeros(3, 3, true);
        for i in 0..3 {
            p.weight.value[i * 3 + i] = 1.0;
        }
        let x = vec_input(&[0.5, -1.0, 2.0]);
        assert_eq!(fully_connected(&x, &p).unwrap().data(), x.data());
    }

    #[test]
    fn zero_weight_outputs_bias() {
        let mut p = LinearParams::<f64>::zeros(4, 2, true);
        p.bias.as_mut().unwrap().fill(0.7);
        let out = fully_connected(&vec_input(&[3.0, -9.0]), &p).unwrap();
        assert_eq!(out.data(), &[0.7; 4]);
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let p = LinearParams::<f64>::zeros(4, 3, false);
        assert!(matches!(fully_connected(&vec_input(&[1.0, 2.0]), &p), Err(crate::Error::Dimension(_))));
    }
}
