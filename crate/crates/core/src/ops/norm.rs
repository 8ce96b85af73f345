//! Per-channel batch normalization over `(N, T, H, W)`.

use crate::error::{dim_err, Result};
use crate::param::{join, Param, Parameters};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Param<F>,
    pub running_var: Param<F>,
    pub eps: f64,
    pub momentum: f64,
}

impl<F: Real> BatchNormParams<F> {
    /// `gamma = 1`, `beta = 0`, running mean 0 and variance 1.
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: Param::filled(&[channels], F::one()),
            beta: Param::zeros(&[channels]),
            running_mean: Param::buffer(&[channels], F::zero()),
            running_var: Param::buffer(&[channels], F::one()),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

impl<F: Real> Parameters<F> for BatchNormParams<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<F> {
    pub normalized: Tensor<F>,
    pub inv_std: Vec<F>,
    pub mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<F> {
    pub input: Tensor<F>,
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
}

/// Two-pass per-channel mean and biased variance.
fn moments<F: Real>(x: &Tensor<F>) -> (Vec<F>, Vec<F>) {
    let c = x.shape().c();
    let m = F::from_usize(x.numel() / c).unwrap();
    let mut mean = vec![F::zero(); c];
    for row in x.data().chunks_exact(c) {
        for (a, &v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v = *v / m);
    let mut var = vec![F::zero(); c];
    for row in x.data().chunks_exact(c) {
        for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|v| *v = *v / m);
    (mean, var)
}

pub fn batch_norm<F: Real>(
    x: &Tensor<F>,
    p: &mut BatchNormParams<F>,
    mode: Mode,
) -> Result<(Tensor<F>, BatchNormCache<F>)> {
    let c = x.shape().c();
    if c != p.channels() {
        return Err(dim_err!("batch_norm: input has {c} channels, parameters {}", p.channels()));
    }
    let eps = F::from_f64_lossy(p.eps);
    let (mean, var) = match mode {
        Mode::Train => {
            let (mean, var) = moments(x);
            let count = x.numel() / c;
            let mom = F::from_f64_lossy(p.momentum);
            let unbias =
                if count > 1 { F::from_usize(count).unwrap() / F::from_usize(count - 1).unwrap() } else { F::one() };
            for i in 0..c {
                let rm = &mut p.running_mean.value[i];
                *rm = (F::one() - mom) * *rm + mom * mean[i];
                let rv = &mut p.running_var.value[i];
                *rv = (F::one() - mom) * *rv + mom * var[i] * unbias;
            }
            (mean, var)
        }
        Mode::Eval => (p.running_mean.value.clone(), p.running_var.value.clone()),
    };
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let mut normalized = Tensor::zeros(x.shape());
    let mut out = Tensor::zeros(x.shape());
    for ((row, nrow), orow) in
        x.data().chunks_exact(c).zip(normalized.data_mut().chunks_exact_mut(c)).zip(out.data_mut().chunks_exact_mut(c))
    {
        for i in 0..c {
            let xh = (row[i] - mean[i]) * inv_std[i];
            nrow[i] = xh;
            orow[i] = p.gamma.value[i] * xh + p.beta.value[i];
        }
    }
    Ok((out, BatchNormCache { normalized, inv_std, mode }))
}

pub fn batch_norm_backward<F: Real>(
    grad: &Tensor<F>,
    p: &BatchNormParams<F>,
    cache: &BatchNormCache<F>,
) -> Result<BatchNormGrads<F>> {
    let c = p.channels();
    if grad.shape() != cache.normalized.shape() {
        return Err(dim_err!("batch_norm backward: gradient {} vs cached {}", grad.shape(), cache.normalized.shape()));
    }
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for (g, xh) in grad.data().chunks_exact(c).zip(cache.normalized.data().chunks_exact(c)) {
        for i in 0..c {
            dgamma[i] += g[i] * xh[i];
            dbeta[i] += g[i];
        }
    }
    let mut input = Tensor::zeros(grad.shape());
    match cache.mode {
        Mode::Eval => {
            for (d, g) in input.data_mut().chunks_exact_mut(c).zip(grad.data().chunks_exact(c)) {
                for i in 0..c {
                    d[i] = g[i] * p.gamma.value[i] * cache.inv_std[i];
                }
            }
        }
        Mode::Train => {
            let m = F::from_usize(grad.numel() / c).unwrap();
            // sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
            for ((d, g), xh) in input
                .data_mut()
                .chunks_exact_mut(c)
                .zip(grad.data().chunks_exact(c))
                .zip(cache.normalized.data().chunks_exact(c))
            {
                for i in 0..c {
                    let gamma = p.gamma.value[i];
                    d[i] = gamma * cache.inv_std[i] / m * (m * g[i] - dbeta[i] - xh[i] * dgamma[i]);
                }
            }
        }
    }
    Ok(BatchNormGrads { input, gamma: dgamma, beta: dbeta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;

    #[test]
    fn eval_with_unit_stats_is_near_identity() {
        let mut p = BatchNormParams::<f64>::new(3);
        let x = Tensor::from_fn(Shape::new(2, 2, 2, 2, 3), |i| i.iter().sum::<usize>() as f64 - 3.0);
        let (y, _) = batch_norm(&x, &mut p, Mode::Eval).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-4);
    }

    #[test]
    fn train_mode_standardizes_and_tracks_stats() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(Shape::new(3, 2, 3, 3, 4), 2.0, &mut rng).map(|v| v + 1.5);
        let mut p = BatchNormParams::<f64>::new(4);
        p.eps = 1e-12;
        let (y, _) = batch_norm(&x, &mut p, Mode::Train).unwrap();
        let (mean, var) = moments(&y);
        for i in 0..4 {
            assert!(mean[i].abs() < 1e-6);
            assert!((var[i] - 1.0).abs() < 1e-6);
        }
        assert!(p.running_mean.value.iter().all(|&m| m > 0.0));
    }
}
