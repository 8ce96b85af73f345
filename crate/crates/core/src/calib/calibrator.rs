//! Self-gating calibrators: context -> transform -> sigmoid -> element-wise gate.

use rand::Rng;

use crate::calib::CalibratorKind;
use crate::error::{dim_err, Error, Result};
use crate::ops::{
    avg_pool, avg_pool_backward, batch_norm, batch_norm_backward, conv3d, conv3d_backward, fully_connected,
    fully_connected_backward, gate_apply, gate_apply_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    upsample_nearest, upsample_nearest_backward, BatchNormCache, BatchNormParams, ConvParams, LinearParams, Mode,
};
use crate::param::{join, Param, Parameters};
use crate::real::Real;
use crate::tensor::Tensor;

/// Squeeze-excitation reduction ratio.
pub const SE_REDUCTION: usize = 16;

/// Number of strided depthwise convs in the gather-excite context branch.
pub const GE_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum CalibratorParams<F> {
    /// ECal-G and S3D-G.
    Fc { fc: LinearParams<F>, bn: Option<BatchNormParams<F>> },
    /// ECal-S, ECal-T and ECal-L.
    Conv { conv: ConvParams<F>, bn: Option<BatchNormParams<F>> },
    /// SE3D.
    Squeeze { reduce: LinearParams<F>, expand: LinearParams<F> },
    /// GE3D-C.
    Depthwise { convs: Vec<ConvParams<F>> },
    /// GE3D-G.
    Empty,
}

/// A calibrator kind with its learned parameters, sized for `channels` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratorSpec<F> {
    pub kind: CalibratorKind,
    pub channels: usize,
    pub params: CalibratorParams<F>,
    pub use_batchnorm: bool,
}

impl<F: Real> CalibratorSpec<F> {
    /// All weights and biases zero, batch norm at its identity initialization.
    ///
    /// Batch norm only applies to the ECals; comparison calibrators ignore the flag.
    pub fn zeros(kind: CalibratorKind, channels: usize, use_batchnorm: bool) -> Result<Self> {
        if channels == 0 {
            return Err(dim_err!("calibrator needs at least one channel"));
        }
        let bn = || use_batchnorm.then(|| BatchNormParams::new(channels));
        let params = match kind {
            CalibratorKind::EcalG => {
                CalibratorParams::Fc { fc: LinearParams::zeros(channels, channels, true), bn: bn() }
            }
            CalibratorKind::EcalS | CalibratorKind::EcalT | CalibratorKind::EcalL => {
                let k = kind.ecal_kernel().expect("conv ECal");
                CalibratorParams::Conv { conv: ConvParams::zeros(channels, channels, k, true).same()?, bn: bn() }
            }
            CalibratorKind::S3dG => {
                CalibratorParams::Fc { fc: LinearParams::zeros(channels, channels, true), bn: None }
            }
            CalibratorKind::Se3d => {
                let hidden = se_hidden(channels);
                CalibratorParams::Squeeze {
                    reduce: LinearParams::zeros(hidden, channels, true),
                    expand: LinearParams::zeros(channels, hidden, true),
                }
            }
            CalibratorKind::Ge3dG => CalibratorParams::Empty,
            CalibratorKind::Ge3dC => CalibratorParams::Depthwise {
                convs: (0..GE_DEPTH)
                    .map(|_| {
                        ConvParams::depthwise(channels, [3, 3, 3], false).with_stride([2, 2, 2]).with_padding([1, 1, 1])
                    })
                    .collect(),
            },
        };
        let use_batchnorm = use_batchnorm && kind.is_ecal();
        Ok(CalibratorSpec { kind, channels, params, use_batchnorm })
    }

    /// He-normal weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        match &mut self.params {
            CalibratorParams::Fc { fc, .. } => {
                let std = (2.0 / fc.c_in() as f64).sqrt();
                *fc = LinearParams::normal(fc.c_out(), fc.c_in(), std, fc.bias.is_some(), rng);
            }
            CalibratorParams::Conv { conv, .. } => conv.init_he(rng),
            CalibratorParams::Squeeze { reduce, expand } => {
                let (h, c) = (reduce.c_out(), reduce.c_in());
                *reduce = LinearParams::normal(h, c, (2.0 / c as f64).sqrt(), true, rng);
                *expand = LinearParams::normal(c, h, (2.0 / h as f64).sqrt(), true, rng);
            }
            CalibratorParams::Depthwise { convs } => convs.iter_mut().for_each(|c| c.init_he(rng)),
            CalibratorParams::Empty => {}
        }
    }

    /// Sets every learned weight and bias to zero; batch-norm affine terms are
    /// reset to `gamma = 1, beta = 0`.
    pub fn zero_weights(&mut self) {
        self.visit_mut("", &mut |name, p| {
            if !p.is_learned() {
                return;
            }
            if name.ends_with("gamma") {
                p.fill(F::one());
            } else {
                p.fill(F::zero());
            }
        });
    }
}

fn se_hidden(channels: usize) -> usize {
    (channels / SE_REDUCTION).max(1)
}

impl<F: Real> Parameters<F> for CalibratorSpec<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        match &self.params {
            CalibratorParams::Fc { fc, bn } => {
                fc.visit(&join(prefix, "fc"), f);
                if let Some(bn) = bn {
                    bn.visit(&join(prefix, "bn"), f);
                }
            }
            CalibratorParams::Conv { conv, bn } => {
                conv.visit(&join(prefix, "conv"), f);
                if let Some(bn) = bn {
                    bn.visit(&join(prefix, "bn"), f);
                }
            }
            CalibratorParams::Squeeze { reduce, expand } => {
                reduce.visit(&join(prefix, "fc1"), f);
                expand.visit(&join(prefix, "fc2"), f);
            }
            CalibratorParams::Depthwise { convs } => {
                for (i, c) in convs.iter().enumerate() {
                    c.visit(&join(prefix, &format!("dw{i}")), f);
                }
            }
            CalibratorParams::Empty => {}
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        match &mut self.params {
            CalibratorParams::Fc { fc, bn } => {
                fc.visit_mut(&join(prefix, "fc"), f);
                if let Some(bn) = bn {
                    bn.visit_mut(&join(prefix, "bn"), f);
                }
            }
            CalibratorParams::Conv { conv, bn } => {
                conv.visit_mut(&join(prefix, "conv"), f);
                if let Some(bn) = bn {
                    bn.visit_mut(&join(prefix, "bn"), f);
                }
            }
            CalibratorParams::Squeeze { reduce, expand } => {
                reduce.visit_mut(&join(prefix, "fc1"), f);
                expand.visit_mut(&join(prefix, "fc2"), f);
            }
            CalibratorParams::Depthwise { convs } => {
                for (i, c) in convs.iter_mut().enumerate() {
                    c.visit_mut(&join(prefix, &format!("dw{i}")), f);
                }
            }
            CalibratorParams::Empty => {}
        }
    }
}

/// Intermediates of one calibrator forward pass.
#[derive(Debug, Clone)]
pub struct CalibratorCache<F> {
    pub input: Tensor<F>,
    /// Pooled (or raw) context fed to the transform.
    pub context: Tensor<F>,
    /// Outputs of each transform stage before the gate logits.
    pub stages: Vec<Tensor<F>>,
    pub bn: Option<BatchNormCache<F>>,
    /// Pre-sigmoid gate values.
    pub logits: Tensor<F>,
    pub gate: Tensor<F>,
}

impl<F: Real> CalibratorCache<F> {
    /// Mean pre-sigmoid logit per sample of the batch.
    pub fn logit_means(&self) -> Vec<f64> {
        let s = self.logits.shape();
        let per = s.numel() / s.n();
        self.logits.data().chunks_exact(per).map(|c| c.iter().map(|v| v.as_f64()).sum::<f64>() / per as f64).collect()
    }
}

/// Applies the calibrator: `sigma(transform(context(x))) (*) x`.
pub fn calibrate<F: Real>(
    x: &Tensor<F>,
    spec: &mut CalibratorSpec<F>,
    mode: Mode,
) -> Result<(Tensor<F>, CalibratorCache<F>)> {
    if x.shape().c() != spec.channels {
        return Err(dim_err!("{} expects {} channels, got {}", spec.kind, spec.channels, x.shape().c()));
    }
    let context = match spec.kind.pool_axes() {
        Some(axes) => avg_pool(x, axes),
        None => x.clone(),
    };
    let mut stages = Vec::new();
    let mut bn_cache = None;
    let logits = match &mut spec.params {
        CalibratorParams::Fc { fc, bn } => {
            let z = fully_connected(&context, fc)?;
            match bn {
                Some(bn) => {
                    let (y, c) = batch_norm(&z, bn, mode)?;
                    bn_cache = Some(c);
                    stages.push(z);
                    y
                }
                None => z,
            }
        }
        CalibratorParams::Conv { conv, bn } => {
            let z = conv3d(&context, conv)?;
            match bn {
                Some(bn) => {
                    let (y, c) = batch_norm(&z, bn, mode)?;
                    bn_cache = Some(c);
                    stages.push(z);
                    y
                }
                None => z,
            }
        }
        CalibratorParams::Squeeze { reduce, expand } => {
            let h = fully_connected(&context, reduce)?;
            let r = relu(&h);
            let z = fully_connected(&r, expand)?;
            stages.push(h);
            stages.push(r);
            z
        }
        CalibratorParams::Depthwise { convs } => {
            let mut cur = context.clone();
            for (i, conv) in convs.iter().enumerate() {
                let z = conv3d(&cur, conv)?;
                stages.push(z.clone());
                cur = if i + 1 < convs.len() { relu(&z) } else { z };
            }
            upsample_nearest(&cur, x.shape())?
        }
        CalibratorParams::Empty => context.clone(),
    };
    let gate = sigmoid(&logits);
    let out = gate_apply(x, &gate)?;
    Ok((out, CalibratorCache { input: x.clone(), context, stages, bn: bn_cache, logits, gate }))
}

/// Backpropagates through [`calibrate`], accumulating parameter gradients into `spec`.
pub fn calibrate_backward<F: Real>(
    grad: &Tensor<F>,
    spec: &mut CalibratorSpec<F>,
    cache: &CalibratorCache<F>,
) -> Result<Tensor<F>> {
    let x = &cache.input;
    let (mut dx, dgate) = gate_apply_backward(x, &cache.gate, grad)?;
    let dlogits = sigmoid_backward(&cache.gate, &dgate);
    let dcontext = match &mut spec.params {
        CalibratorParams::Fc { fc, bn } => {
            let dz = through_bn(&dlogits, bn.as_mut(), cache)?;
            let g = fully_connected_backward(&cache.context, fc, &dz)?;
            accumulate_linear(fc, &g.weight, g.bias.as_deref());
            g.input
        }
        CalibratorParams::Conv { conv, bn } => {
            let dz = through_bn(&dlogits, bn.as_mut(), cache)?;
            let g = conv3d_backward(&cache.context, conv, &dz)?;
            conv.kernel.accumulate(&g.kernel);
            if let (Some(b), Some(gb)) = (conv.bias.as_mut(), g.bias.as_ref()) {
                b.accumulate(gb);
            }
            g.input
        }
        CalibratorParams::Squeeze { reduce, expand } => {
            let (h, r) = (&cache.stages[0], &cache.stages[1]);
            let g2 = fully_connected_backward(r, expand, &dlogits)?;
            accumulate_linear(expand, &g2.weight, g2.bias.as_deref());
            let dh = relu_backward(h, &g2.input);
            let g1 = fully_connected_backward(&cache.context, reduce, &dh)?;
            accumulate_linear(reduce, &g1.weight, g1.bias.as_deref());
            g1.input
        }
        CalibratorParams::Depthwise { convs } => {
            let last = cache.stages.last().expect("depthwise stages").shape();
            let mut d = upsample_nearest_backward(&dlogits, last);
            for i in (0..convs.len()).rev() {
                if i + 1 < convs.len() {
                    d = relu_backward(&cache.stages[i], &d);
                }
                let input = if i == 0 { cache.context.clone() } else { relu(&cache.stages[i - 1]) };
                let g = conv3d_backward(&input, &convs[i], &d)?;
                convs[i].kernel.accumulate(&g.kernel);
                d = g.input;
            }
            d
        }
        CalibratorParams::Empty => dlogits,
    };
    let dx2 = match spec.kind.pool_axes() {
        Some(axes) => avg_pool_backward(&dcontext, x.shape(), axes),
        None => dcontext,
    };
    dx.add_assign(&dx2)?;
    Ok(dx)
}

fn through_bn<F: Real>(
    dlogits: &Tensor<F>,
    bn: Option<&mut BatchNormParams<F>>,
    cache: &CalibratorCache<F>,
) -> Result<Tensor<F>> {
    match (bn, &cache.bn) {
        (Some(bn), Some(c)) => {
            let g = batch_norm_backward(dlogits, bn, c)?;
            bn.gamma.accumulate(&g.gamma);
            bn.beta.accumulate(&g.beta);
            Ok(g.input)
        }
        (None, None) => Ok(dlogits.clone()),
        _ => Err(Error::Invariant("batch-norm cache does not match calibrator parameters".into())),
    }
}

fn accumulate_linear<F: Real>(p: &mut LinearParams<F>, dw: &[F], db: Option<&[F]>) {
    p.weight.accumulate(dw);
    if let (Some(b), Some(g)) = (p.bias.as_mut(), db) {
        b.accumulate(g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sigmoid_scalar;
    use crate::tensor::Shape;

    fn frames(vals: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, vals.len(), 1, 1, 1), vals.to_vec()).unwrap()
    }

    #[test]
    fn zero_parameters_halve_input() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 3, 3, 3, 4), |i| i.iter().sum::<usize>() as f64 * 0.37 - 2.0);
        for kind in [CalibratorKind::ECALS, CalibratorKind::COMPARISON].concat() {
            if kind == CalibratorKind::Ge3dG {
                continue;
            }
            let mut spec = CalibratorSpec::zeros(kind, 4, true).unwrap();
            let (y, _) = calibrate(&x, &mut spec, Mode::Eval).unwrap();
            for (a, b) in y.data().iter().zip(x.data()) {
                assert_eq!(*a, b / 2.0, "{kind}");
            }
        }
    }

    #[test]
    fn zero_input_stays_zero() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 2, 2, 3));
        let mut spec = CalibratorSpec::zeros(CalibratorKind::Ge3dG, 3, false).unwrap();
        let (y, cache) = calibrate(&x, &mut spec, Mode::Eval).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(cache.gate.data().iter().all(|&g| g == 0.5));
    }

    #[test]
    fn ecal_g_identity_fc_on_constant() {
        let mut spec = CalibratorSpec::<f64>::zeros(CalibratorKind::EcalG, 1, false).unwrap();
        if let CalibratorParams::Fc { fc, .. } = &mut spec.params {
            fc.weight.value[0] = 1.0;
        }
        let x = Tensor::full(Shape::new(1, 2, 2, 2, 1), 2.0);
        let (y, _) = calibrate(&x, &mut spec, Mode::Eval).unwrap();
        let want = 2.0 * sigmoid_scalar(2.0);
        assert!(y.data().iter().all(|&v| (v - want).abs() < 1e-15));
        assert!((want - 1.761594).abs() < 1e-6);
    }

    #[test]
    fn ecal_s_identity_kernel_hand_values() {
        let mut spec = CalibratorSpec::<f64>::zeros(CalibratorKind::EcalS, 1, false).unwrap();
        if let CalibratorParams::Conv { conv, .. } = &mut spec.params {
            conv.kernel.value[4] = 1.0;
        }
        let (y, _) = calibrate(&frames(&[0.0, 2.0]), &mut spec, Mode::Eval).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 2.0 * 0.731059).abs() < 1e-6);
        assert!((y.data()[1] - 1.462117).abs() < 1e-6);
    }

    #[test]
    fn ecal_t_identity_kernel_hand_values() {
        let mut spec = CalibratorSpec::<f64>::zeros(CalibratorKind::EcalT, 1, false).unwrap();
        if let CalibratorParams::Conv { conv, .. } = &mut spec.params {
            conv.kernel.value[1] = 1.0;
        }
        let (y, _) = calibrate(&frames(&[0.0, 2.0]), &mut spec, Mode::Eval).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 1.761594).abs() < 1e-6);
    }

    #[test]
    fn ecal_l_identity_kernel_is_self_gating() {
        let mut spec = CalibratorSpec::<f64>::zeros(CalibratorKind::EcalL, 2, false).unwrap();
        if let CalibratorParams::Conv { conv, .. } = &mut spec.params {
            // kernel [C_out, C_in, 3, 1, 1]: centre tap of the diagonal
            conv.kernel.value[1] = 1.0;
            conv.kernel.value[(2 + 1) * 3 + 1] = 1.0;
        }
        let x = Tensor::from_fn(Shape::new(1, 3, 2, 2, 2), |i| i.iter().sum::<usize>() as f64 * 0.4 - 1.1);
        let (y, _) = calibrate(&x, &mut spec, Mode::Eval).unwrap();
        for (a, &b) in y.data().iter().zip(x.data()) {
            assert!((a - sigmoid_scalar(b) * b).abs() < 1e-15);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut spec = CalibratorSpec::<f64>::zeros(CalibratorKind::EcalT, 3, false).unwrap();
        let x = Tensor::zeros(Shape::new(1, 2, 2, 2, 4));
        assert!(matches!(calibrate(&x, &mut spec, Mode::Eval), Err(Error::Dimension(_))));
    }

    #[test]
    fn se3d_parameter_count() {
        let spec = CalibratorSpec::<f64>::zeros(CalibratorKind::Se3d, 64, false).unwrap();
        let mut weights = 0;
        spec.visit("", &mut |name, p| {
            if name.ends_with("weight") {
                weights += p.len()
            }
        });
        assert_eq!(weights, 512);
    }
}
