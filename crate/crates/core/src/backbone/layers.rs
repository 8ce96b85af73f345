//! Stateful wrappers that keep forward inputs around for the backward pass.

use crate::error::{Error, Result};
use crate::ops::{
    batch_norm, batch_norm_backward, conv3d, conv3d_backward, relu, relu_backward, BatchNormCache, BatchNormParams,
    ConvParams, Mode,
};
use crate::param::{Param, Parameters};
use crate::real::Real;
use crate::tensor::Tensor;

fn missing(layer: &str) -> Error {
    Error::Invariant(format!("{layer} backward called before forward"))
}

#[derive(Debug, Clone)]
pub struct ConvLayer<F> {
    pub params: ConvParams<F>,
    input: Option<Tensor<F>>,
}

impl<F: Real> ConvLayer<F> {
    pub fn new(params: ConvParams<F>) -> Self {
        ConvLayer { params, input: None }
    }

    pub fn forward(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let y = conv3d(x, &self.params)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let x = self.input.take().ok_or_else(|| missing("conv"))?;
        let g = conv3d_backward(&x, &self.params, grad)?;
        self.params.kernel.accumulate(&g.kernel);
        if let (Some(b), Some(gb)) = (self.params.bias.as_mut(), g.bias.as_ref()) {
            b.accumulate(gb);
        }
        Ok(g.input)
    }
}

impl<F: Real> Parameters<F> for ConvLayer<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.params.visit(prefix, f)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.params.visit_mut(prefix, f)
    }
}

#[derive(Debug, Clone)]
pub struct BnLayer<F> {
    pub params: BatchNormParams<F>,
    cache: Option<BatchNormCache<F>>,
}

impl<F: Real> BnLayer<F> {
    pub fn new(channels: usize) -> Self {
        BnLayer { params: BatchNormParams::new(channels), cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        let (y, cache) = batch_norm(x, &mut self.params, mode)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let cache = self.cache.take().ok_or_else(|| missing("batch_norm"))?;
        let g = batch_norm_backward(grad, &self.params, &cache)?;
        self.params.gamma.accumulate(&g.gamma);
        self.params.beta.accumulate(&g.beta);
        Ok(g.input)
    }
}

impl<F: Real> Parameters<F> for BnLayer<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.params.visit(prefix, f)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.params.visit_mut(prefix, f)
    }
}

/// ReLU that remembers its input.
#[derive(Debug, Clone, Default)]
pub struct ReluLayer<F> {
    input: Option<Tensor<F>>,
}

impl<F: Real> ReluLayer<F> {
    pub fn forward(&mut self, x: Tensor<F>) -> Tensor<F> {
        let y = relu(&x);
        self.input = Some(x);
        y
    }

    pub fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let x = self.input.take().ok_or_else(|| missing("relu"))?;
        Ok(relu_backward(&x, grad))
    }
}
