//! Full network: stem, bottleneck stages, temporal-average head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::block::{Bottleneck, Site};
use crate::backbone::layers::{BnLayer, ConvLayer, ReluLayer};
use crate::backbone::spec::NetworkSpec;
use crate::calib::CalibratorKind;
use crate::error::{dim_err, Error, Result};
use crate::ops::{
    avg_pool, avg_pool_backward, fully_connected, fully_connected_backward, max_pool, max_pool_backward, ConvParams,
    LinearParams, MaxPoolSpec, Mode, PoolAxes,
};
use crate::param::{join, Param, Parameters};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Standard deviation of the classifier weights at initialization; small so
/// that the initial softmax is close to uniform.
pub const HEAD_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct Model<F> {
    pub spec: NetworkSpec,
    stem_conv: ConvLayer<F>,
    stem_bn: BnLayer<F>,
    stem_relu: ReluLayer<F>,
    stem_pool: Option<(Shape, Vec<usize>)>,
    pub blocks: Vec<Bottleneck<F>>,
    pub fc: LinearParams<F>,
    head: Option<(Shape, Tensor<F>)>,
}

/// Builds every layer of `spec` and initializes it deterministically from `seed`.
pub fn build_network<F: Real>(spec: &NetworkSpec, seed: u64) -> Result<Model<F>> {
    let mut model = Model::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.stem_conv.params.init_he(&mut rng);
    for b in &mut model.blocks {
        b.init(&mut rng);
    }
    model.fc = LinearParams::normal(spec.num_classes, spec.final_channels(), HEAD_INIT_STD, true, &mut rng);
    Ok(model)
}

/// Gate logit means of one calibrator at one site, per sample of the last forward.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteGateLogits {
    pub site: usize,
    pub kind: CalibratorKind,
    pub per_sample: Vec<f64>,
}

impl<F: Real> Model<F> {
    /// All conv kernels, calibrator weights and the head zeroed; BN at identity.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let k = spec.stem.kernel;
        let s = spec.stem.stride;
        let stem = ConvParams::zeros(spec.stem.out_channels, spec.in_channels, [1, k, k], false)
            .with_stride([1, s, s])
            .with_padding([0, k / 2, k / 2]);
        let blocks = spec.block_specs()?.into_iter().map(Bottleneck::new).collect::<Result<Vec<_>>>()?;
        Ok(Model {
            spec: spec.clone(),
            stem_conv: ConvLayer::new(stem),
            stem_bn: BnLayer::new(spec.stem.out_channels),
            stem_relu: ReluLayer::default(),
            stem_pool: None,
            blocks,
            fc: LinearParams::zeros(spec.num_classes, spec.final_channels(), true),
            head: None,
        })
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        let s = &self.spec;
        Shape::new(batch, s.frames, s.resolution, s.resolution, s.in_channels)
    }

    /// Logits as `[N, 1, 1, 1, num_classes]`.
    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        let expect = self.input_shape(x.shape().n());
        if x.shape() != expect {
            return Err(dim_err!("network expects input {expect}, got {}", x.shape()));
        }
        let h = self.stem_conv.forward(x)?;
        let h = self.stem_bn.forward(&h, mode)?;
        let mut h = self.stem_relu.forward(h);
        if self.spec.stem.max_pool {
            let (p, argmax) = max_pool(&h, &MaxPoolSpec::STEM)?;
            self.stem_pool = Some((h.shape(), argmax));
            h = p;
        }
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        let pooled = avg_pool(&h, PoolAxes::Global);
        let logits = fully_connected(&pooled, &self.fc)?;
        self.head = Some((h.shape(), pooled));
        Ok(logits)
    }

    /// Propagates `d loss / d logits` through the last forward, accumulating
    /// parameter gradients; returns the input gradient.
    pub fn backward(&mut self, grad_logits: &Tensor<F>) -> Result<Tensor<F>> {
        let missing = || Error::Invariant("network backward called before forward".into());
        let (features, pooled) = self.head.take().ok_or_else(missing)?;
        let g = fully_connected_backward(&pooled, &self.fc, grad_logits)?;
        self.fc.weight.accumulate(&g.weight);
        if let (Some(b), Some(gb)) = (self.fc.bias.as_mut(), g.bias.as_ref()) {
            b.accumulate(gb);
        }
        let mut h = avg_pool_backward(&g.input, features, PoolAxes::Global);
        for b in self.blocks.iter_mut().rev() {
            h = b.backward(&h)?;
        }
        if self.spec.stem.max_pool {
            let (shape, argmax) = self.stem_pool.take().ok_or_else(missing)?;
            h = max_pool_backward(&h, shape, &argmax);
        }
        let h = self.stem_relu.backward(&h)?;
        let h = self.stem_bn.backward(&h)?;
        self.stem_conv.backward(&h)
    }

    /// Pre-sigmoid gate logit means recorded by every GC site in the last forward.
    pub fn gate_logits(&self) -> Vec<SiteGateLogits> {
        let mut out = Vec::new();
        for b in &self.blocks {
            if let Site::Gc(gc) = &b.site {
                for (kind, per_sample) in gc.gate_logit_means() {
                    out.push(SiteGateLogits { site: gc.site_index, kind, per_sample });
                }
            }
        }
        out
    }

    /// Zeroes every calibrator weight (BN gamma stays 1).
    pub fn zero_calibrators(&mut self) {
        for b in &mut self.blocks {
            match &mut b.site {
                Site::None => {}
                Site::Gc(gc) => gc.zero_weights(),
                Site::Single { spec, .. } => spec.zero_weights(),
            }
        }
    }

    /// Named parameters and buffers in a stable order.
    pub fn named_parameters(&self) -> Vec<(String, Param<F>)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, p| out.push((n.to_string(), p.clone())));
        out
    }
}

impl<F: Real> Parameters<F> for Model<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.stem_conv.visit(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit(&join(prefix, "stem.bn"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.fc.visit(&join(prefix, "fc"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.stem_conv.visit_mut(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit_mut(&join(prefix, "stem.bn"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.fc.visit_mut(&join(prefix, "fc"), f);
    }
}
