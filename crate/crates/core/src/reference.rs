//! Naive-loop reference implementations used as oracles for the fast kernels.
//!
//! Everything here is written directly from the definitions, index by index,
//! in `f64`, and shares no code with `ops` beyond tensor storage.

use std::collections::HashMap;

use num_rational::Ratio;

use crate::backbone::{BlockStyle, Bottleneck, Site};

use crate::calib::{chunk_assignment, CalibratorKind, CalibratorParams, CalibratorSpec, GcConfig};
use crate::ops::{BatchNormParams, ConvParams, LinearParams, MaxPoolSpec, PoolAxes};
use crate::param::{Param, Parameters};
use crate::tensor::{Shape, Tensor};

pub fn pool(x: &Tensor<f64>, axes: PoolAxes) -> Tensor<f64> {
    let s = x.shape();
    let (pt, ps) = match axes {
        PoolAxes::Global => (true, true),
        PoolAxes::Time => (true, false),
        PoolAxes::Space => (false, true),
    };
    let os =
        Shape::new(s.n(), if pt { 1 } else { s.t() }, if ps { 1 } else { s.h() }, if ps { 1 } else { s.w() }, s.c());
    let count = (if pt { s.t() } else { 1 }) * (if ps { s.h() * s.w() } else { 1 });
    Tensor::from_fn(os, |[n, t, h, w, c]| {
        let mut acc = 0.0;
        for tt in 0..s.t() {
            for hh in 0..s.h() {
                for ww in 0..s.w() {
                    let keep_t = pt || tt == t;
                    let keep_s = ps || (hh == h && ww == w);
                    if keep_t && keep_s {
                        acc += x.at(n, tt, hh, ww, c);
                    }
                }
            }
        }
        acc / count as f64
    })
}

pub fn fully_connected(x: &Tensor<f64>, p: &LinearParams<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (co, ci) = (p.c_out(), p.c_in());
    Tensor::from_fn(Shape::new(s.n(), 1, 1, 1, co), |[n, _, _, _, o]| {
        let mut acc = p.bias.as_ref().map_or(0.0, |b| b.value[o]);
        for i in 0..ci {
            acc += p.weight.value[o * ci + i] * x.at(n, 0, 0, 0, i);
        }
        acc
    })
}

pub fn conv3d(x: &Tensor<f64>, p: &ConvParams<f64>) -> Tensor<f64> {
    let s = x.shape();
    let k = &p.kernel.shape;
    let (cout, cin_g, kt, kh, kw) = (k[0], k[1], k[2], k[3], k[4]);
    let cout_g = cout / p.groups;
    let ext = [s.t(), s.h(), s.w()];
    let ks = [kt, kh, kw];
    let o: Vec<usize> = (0..3).map(|a| (ext[a] + 2 * p.padding[a] - ks[a]) / p.stride[a] + 1).collect();
    Tensor::from_fn(Shape::new(s.n(), o[0], o[1], o[2], cout), |[n, t, h, w, co]| {
        let g = co / cout_g;
        let mut acc = p.bias.as_ref().map_or(0.0, |b| b.value[co]);
        for ci in 0..cin_g {
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let it = (t * p.stride[0] + dt) as isize - p.padding[0] as isize;
                        let ih = (h * p.stride[1] + dh) as isize - p.padding[1] as isize;
                        let iw = (w * p.stride[2] + dw) as isize - p.padding[2] as isize;
                        if it < 0 || ih < 0 || iw < 0 {
                            continue;
                        }
                        let (it, ih, iw) = (it as usize, ih as usize, iw as usize);
                        if it >= s.t() || ih >= s.h() || iw >= s.w() {
                            continue;
                        }
                        let widx = (((co * cin_g + ci) * kt + dt) * kh + dh) * kw + dw;
                        acc += p.kernel.value[widx] * x.at(n, it, ih, iw, g * cin_g + ci);
                    }
                }
            }
        }
        acc
    })
}

pub fn sigmoid(x: &Tensor<f64>) -> Tensor<f64> {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn relu(x: &Tensor<f64>) -> Tensor<f64> {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Materializes the broadcast of `g` to `x`'s shape, then multiplies.
pub fn gate(x: &Tensor<f64>, g: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let gs = g.shape();
    let pick = |i: usize, extent: usize| if extent == 1 { 0 } else { i };
    let expanded = Tensor::from_fn(s, |[n, t, h, w, c]| g.at(n, pick(t, gs.t()), pick(h, gs.h()), pick(w, gs.w()), c));
    let mut out = x.clone();
    for (o, e) in out.data_mut().iter_mut().zip(expanded.data()) {
        *o *= e;
    }
    out
}

/// Batch norm with two-pass batch moments (train) or running statistics (eval).
pub fn batch_norm(x: &Tensor<f64>, p: &BatchNormParams<f64>, use_batch_stats: bool) -> Tensor<f64> {
    let s = x.shape();
    let m = (s.numel() / s.c()) as f64;
    let mut mean = vec![0.0; s.c()];
    let mut var = vec![0.0; s.c()];
    for c in 0..s.c() {
        if use_batch_stats {
            let vals: Vec<f64> = x.data().iter().skip(c).step_by(s.c()).cloned().collect();
            mean[c] = vals.iter().sum::<f64>() / m;
            var[c] = vals.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / m;
        } else {
            mean[c] = p.running_mean.value[c];
            var[c] = p.running_var.value[c];
        }
    }
    Tensor::from_fn(s, |[n, t, h, w, c]| {
        (x.at(n, t, h, w, c) - mean[c]) / (var[c] + p.eps).sqrt() * p.gamma.value[c] + p.beta.value[c]
    })
}

pub fn temporal_shift(x: &Tensor<f64>, ratio: Ratio<usize>) -> Tensor<f64> {
    let s = x.shape();
    let fold = (Ratio::from_integer(s.c()) * ratio).to_integer();
    Tensor::from_fn(s, |[n, t, h, w, c]| {
        let src = if c < fold {
            t.checked_sub(1)
        } else if c < 2 * fold {
            Some(t + 1).filter(|&v| v < s.t())
        } else {
            Some(t)
        };
        src.map_or(0.0, |tt| x.at(n, tt, h, w, c))
    })
}

pub fn max_pool(x: &Tensor<f64>, spec: &MaxPoolSpec) -> Tensor<f64> {
    let s = x.shape();
    let ext = [s.t(), s.h(), s.w()];
    let o: Vec<usize> = (0..3).map(|a| (ext[a] + 2 * spec.padding[a] - spec.kernel[a]) / spec.stride[a] + 1).collect();
    Tensor::from_fn(Shape::new(s.n(), o[0], o[1], o[2], s.c()), |[n, t, h, w, c]| {
        let mut best = f64::NEG_INFINITY;
        for dt in 0..spec.kernel[0] {
            for dh in 0..spec.kernel[1] {
                for dw in 0..spec.kernel[2] {
                    let it = (t * spec.stride[0] + dt) as isize - spec.padding[0] as isize;
                    let ih = (h * spec.stride[1] + dh) as isize - spec.padding[1] as isize;
                    let iw = (w * spec.stride[2] + dw) as isize - spec.padding[2] as isize;
                    if it >= 0
                        && ih >= 0
                        && iw >= 0
                        && (it as usize) < ext[0]
                        && (ih as usize) < ext[1]
                        && (iw as usize) < ext[2]
                    {
                        best = best.max(x.at(n, it as usize, ih as usize, iw as usize, c));
                    }
                }
            }
        }
        best
    })
}

pub fn upsample_nearest(x: &Tensor<f64>, target: Shape) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(target, |[n, t, h, w, c]| {
        x.at(n, t * s.t() / target.t(), h * s.h() / target.h(), w * s.w() / target.w(), c)
    })
}

/// Pre-sigmoid gate logits of a calibrator, composed from the references above.
pub fn calibrator_logits(x: &Tensor<f64>, spec: &CalibratorSpec<f64>) -> Tensor<f64> {
    let context = match spec.kind.pool_axes() {
        Some(axes) => pool(x, axes),
        None => x.clone(),
    };
    match &spec.params {
        CalibratorParams::Fc { fc, bn } => {
            let z = fully_connected(&context, fc);
            bn.as_ref().map_or(z.clone(), |b| batch_norm(&z, b, true))
        }
        CalibratorParams::Conv { conv, bn } => {
            let z = conv3d(&context, conv);
            bn.as_ref().map_or(z.clone(), |b| batch_norm(&z, b, true))
        }
        CalibratorParams::Squeeze { reduce, expand } => {
            fully_connected(&relu(&fully_connected(&context, reduce)), expand)
        }
        CalibratorParams::Depthwise { convs } => {
            let mut cur = context;
            for (i, c) in convs.iter().enumerate() {
                cur = conv3d(&cur, c);
                if i + 1 < convs.len() {
                    cur = relu(&cur);
                }
            }
            upsample_nearest(&cur, x.shape())
        }
        CalibratorParams::Empty => context,
    }
}

/// Calibrator output with batch norm (if any) using batch statistics.
pub fn calibrate(x: &Tensor<f64>, spec: &CalibratorSpec<f64>) -> Tensor<f64> {
    gate(x, &sigmoid(&calibrator_logits(x, spec)))
}

/// GC forward: each enabled calibrator gates its assigned chunk, copied out
/// and back channel by channel.
pub fn gc_forward(
    x: &Tensor<f64>,
    cfg: &GcConfig,
    site_index: usize,
    calibrators: &[(usize, CalibratorSpec<f64>)],
) -> Tensor<f64> {
    let s = x.shape();
    let chunk = (cfg.p * s.c()).to_integer() / 4;
    let mut out = x.clone();
    if chunk == 0 {
        return out;
    }
    let assignment = chunk_assignment(cfg, site_index).expect("legal assignment");
    for (slot, spec) in calibrators {
        let (kind, idx): (CalibratorKind, usize) = assignment[*slot];
        assert_eq!(kind, spec.kind);
        let start = idx * chunk;
        let part = Tensor::from_fn(s.with_c(chunk), |[n, t, h, w, c]| x.at(n, t, h, w, start + c));
        let y = calibrate(&part, spec);
        for n in 0..s.n() {
            for t in 0..s.t() {
                for h in 0..s.h() {
                    for w in 0..s.w() {
                        for c in 0..chunk {
                            *out.at_mut(n, t, h, w, start + c) = y.at(n, t, h, w, c);
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_from(
    params: &HashMap<String, Param<f64>>,
    name: &str,
    stride: [usize; 3],
    padding: [usize; 3],
) -> ConvParams<f64> {
    ConvParams {
        kernel: params[&format!("{name}.kernel")].clone(),
        bias: params.get(&format!("{name}.bias")).cloned(),
        stride,
        padding,
        groups: 1,
    }
}

fn bn_from(params: &HashMap<String, Param<f64>>, name: &str) -> BatchNormParams<f64> {
    let mut p = BatchNormParams::new(params[&format!("{name}.gamma")].len());
    p.gamma = params[&format!("{name}.gamma")].clone();
    p.beta = params[&format!("{name}.beta")].clone();
    p.running_mean = params[&format!("{name}.running_mean")].clone();
    p.running_var = params[&format!("{name}.running_var")].clone();
    p
}

/// Bottleneck forward with batch statistics, rebuilt from the block's named
/// parameters and its spec.
pub fn bottleneck(x: &Tensor<f64>, block: &Bottleneck<f64>) -> Tensor<f64> {
    let spec = &block.spec;
    let mut params = HashMap::new();
    block.visit("", &mut |n, p| {
        params.insert(n.to_string(), p.clone());
    });
    let s = spec.stride;
    let input = if spec.style == BlockStyle::Tsm { temporal_shift(x, spec.shift_ratio) } else { x.clone() };
    let h = conv3d(&input, &conv_from(&params, "conv1", [1; 3], [0; 3]));
    let h = relu(&batch_norm(&h, &bn_from(&params, "bn1"), true));
    let h = match spec.style {
        BlockStyle::Tsn | BlockStyle::Tsm => conv3d(&h, &conv_from(&params, "conv2", [1, s, s], [0, 1, 1])),
        BlockStyle::Gst => {
            let (cs, ct) = spec.gst_split();
            let hs = h.shape();
            let a = Tensor::from_fn(hs.with_c(cs), |[n, t, i, j, c]| h.at(n, t, i, j, c));
            let b = Tensor::from_fn(hs.with_c(ct), |[n, t, i, j, c]| h.at(n, t, i, j, cs + c));
            let a = conv3d(&a, &conv_from(&params, "conv2s", [1, s, s], [0, 1, 1]));
            let b = conv3d(&b, &conv_from(&params, "conv2t", [1, s, s], [1, 1, 1]));
            Tensor::from_fn(a.shape().with_c(cs + ct), |[n, t, i, j, c]| {
                if c < cs {
                    a.at(n, t, i, j, c)
                } else {
                    b.at(n, t, i, j, c - cs)
                }
            })
        }
    };
    let on_output = spec.site_on_output();
    let site = |t: &Tensor<f64>| match &block.site {
        Site::None => t.clone(),
        Site::Gc(gc) => gc_forward(t, &gc.cfg, gc.site_index, &gc.calibrators),
        Site::Single { spec, .. } => calibrate(t, spec),
    };
    let h = if on_output { h } else { site(&h) };
    let h = relu(&batch_norm(&h, &bn_from(&params, "bn2"), true));
    let h = batch_norm(&conv3d(&h, &conv_from(&params, "conv3", [1; 3], [0; 3])), &bn_from(&params, "bn3"), true);
    let h = if on_output { site(&h) } else { h };
    let identity = if spec.has_projection() {
        let c = conv3d(x, &conv_from(&params, "downsample.conv", [1, s, s], [0; 3]));
        batch_norm(&c, &bn_from(&params, "downsample.bn"), true)
    } else {
        x.clone()
    };
    let mut out = h;
    for (o, i) in out.data_mut().iter_mut().zip(identity.data()) {
        *o += i;
    }
    relu(&out)
}
