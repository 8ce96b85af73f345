//! Central finite-difference checks of every backward pass, in `f64`.
//!
//! Each check draws random small shapes and parameters, sets
//! `loss = sum(w * out)` for a random `w`, and compares the analytic gradient
//! of every input and learned parameter with `(L(v + h) - L(v - h)) / 2h`.

use std::rc::Rc;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{BlockSpec, BlockStyle, Bottleneck, SiteSpec};
use crate::calib::{calibrate, calibrate_backward, CalibratorKind, CalibratorSpec, GcConfig, GcModule, Placement};
use crate::error::{config_err, Result};
use crate::ops::*;
use crate::param::Parameters;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    /// Differences at or below this are accepted regardless of magnitude.
    pub abs_floor: f64,
    /// Random shapes per check.
    pub trials: usize,
    pub seed: u64,
    /// Coordinates probed per variable when it has more elements than this.
    pub max_coords: usize,
    /// Scales the analytic gradient of the named check, to exercise failure reporting.
    pub inject_fault: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-5,
            rel_tol: 1e-5,
            abs_floor: 1e-8,
            trials: 20,
            seed: 0,
            max_coords: 48,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub coords: usize,
    /// Coordinates whose difference interval straddles a ReLU kink (piecewise checks only).
    pub skipped: usize,
    pub max_rel_error: f64,
    pub passed: bool,
    /// Description of the worst coordinate.
    pub worst: String,
}

type Vars = Vec<Vec<f64>>;
type EvalFn = Box<dyn Fn(&Vars) -> Result<Tensor<f64>>>;
type GradFn = Box<dyn Fn(&Vars, &Tensor<f64>) -> Result<Vars>>;

/// A differentiable function of several flat variables.
pub struct Case {
    pub names: Vec<String>,
    pub vars: Vars,
    eval: EvalFn,
    grad: GradFn,
}

fn weighted_sum(out: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Error of one coordinate: zero when within the absolute floor, otherwise
/// relative to the larger magnitude.
pub fn coord_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= abs_floor {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Relative mismatch of the two one-sided differences above which a
/// coordinate of a piecewise-smooth check is treated as straddling a kink.
pub const KINK_RATIO: f64 = 1e-3;

struct CaseOutcome {
    worst: f64,
    coords: usize,
    skipped: usize,
    desc: String,
}

fn run_case(
    case: &Case,
    cfg: &GradcheckConfig,
    faulty: bool,
    piecewise: bool,
    rng: &mut ChaCha8Rng,
) -> Result<CaseOutcome> {
    let out = (case.eval)(&case.vars)?;
    let w = Tensor::randn(out.shape(), 1.0, rng);
    let center = weighted_sum(&out, &w);
    let mut analytic = (case.grad)(&case.vars, &w)?;
    if faulty {
        analytic.iter_mut().flatten().for_each(|g| *g *= 1.0 + 1e-3);
    }
    let mut worst = (0.0, String::from("-"));
    let mut coords = 0;
    let mut skipped = 0;
    for (vi, v) in case.vars.iter().enumerate() {
        let idx: Vec<usize> = if v.len() <= cfg.max_coords {
            (0..v.len()).collect()
        } else {
            (0..cfg.max_coords).map(|_| rng.gen_range(0..v.len())).collect()
        };
        for i in idx {
            let mut probe = case.vars.clone();
            probe[vi][i] = v[i] + cfg.step;
            let plus = weighted_sum(&(case.eval)(&probe)?, &w);
            probe[vi][i] = v[i] - cfg.step;
            let minus = weighted_sum(&(case.eval)(&probe)?, &w);
            if piecewise {
                let (up, down) = (plus - center, center - minus);
                if (up - down).abs() > KINK_RATIO * up.abs().max(down.abs()) + 1e-13 {
                    skipped += 1;
                    continue;
                }
            }
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let e = coord_error(analytic[vi][i], numeric, cfg.abs_floor);
            coords += 1;
            if e > worst.0 || (e.is_nan() && !worst.0.is_nan()) {
                worst =
                    (e, format!("{}[{i}]: analytic {:.9e} numeric {:.9e}", case.names[vi], analytic[vi][i], numeric));
            }
        }
    }
    Ok(CaseOutcome { worst: worst.0, coords, skipped, desc: worst.1 })
}

fn rand_shape<R: Rng>(rng: &mut R, min_n: usize) -> Shape {
    Shape::new(
        rng.gen_range(min_n..=5.max(min_n)),
        rng.gen_range(1..=5),
        rng.gen_range(1..=5),
        rng.gen_range(1..=5),
        rng.gen_range(1..=5),
    )
}

/// Values bounded away from zero, for inputs to kinked functions.
fn away_from_zero<R: Rng>(shape: Shape, rng: &mut R) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values at least `1e-3` apart, for max pooling.
fn well_separated<R: Rng>(shape: Shape, rng: &mut R) -> Tensor<f64> {
    let mut v: Vec<f64> = (0..shape.numel()).map(|i| i as f64 * 1e-2).collect();
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
    Tensor::from_vec(shape, v).expect("sized")
}

fn unary(
    shape: Shape,
    x: Tensor<f64>,
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>> + 'static,
    b: impl Fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>> + 'static,
) -> Case {
    Case {
        names: vec!["x".into()],
        vars: vec![x.into_data()],
        eval: Box::new(move |v| f(&Tensor::from_vec(shape, v[0].clone())?)),
        grad: Box::new(move |v, w| Ok(vec![b(&Tensor::from_vec(shape, v[0].clone())?, w)?.into_data()])),
    }
}

/// Wraps a module whose variables are the input followed by every learned
/// parameter. `bwd` receives the forward input and must accumulate parameter
/// gradients into the module.
fn module_case<M>(
    module: M,
    x: Tensor<f64>,
    fwd: impl Fn(&mut M, &Tensor<f64>) -> Result<Tensor<f64>> + 'static,
    bwd: impl Fn(&mut M, &Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>> + 'static,
) -> Case
where
    M: Parameters<f64> + Clone + 'static,
{
    let shape = x.shape();
    let mut names = vec!["x".to_string()];
    let mut vars = vec![x.into_data()];
    module.visit("", &mut |n, p| {
        if p.is_learned() {
            names.push(n.to_string());
            vars.push(p.value.clone());
        }
    });
    let module = Rc::new(module);
    let fwd = Rc::new(fwd);
    fn load<M: Parameters<f64> + Clone>(m: &M, v: &Vars) -> M {
        let mut m = m.clone();
        let mut i = 1;
        m.visit_mut("", &mut |_, p| {
            if p.is_learned() {
                p.value.clone_from(&v[i]);
                i += 1;
            }
        });
        m
    }
    let (m1, f1) = (module.clone(), fwd.clone());
    let eval: EvalFn = Box::new(move |v| {
        let mut m = load(&*m1, v);
        f1(&mut m, &Tensor::from_vec(shape, v[0].clone())?)
    });
    let grad: GradFn = Box::new(move |v, w| {
        let mut m = load(&*module, v);
        let x = Tensor::from_vec(shape, v[0].clone())?;
        fwd(&mut m, &x)?;
        m.zero_grad();
        let dx = bwd(&mut m, &x, w)?;
        let mut out = vec![dx.into_data()];
        m.visit("", &mut |_, p| {
            if p.is_learned() {
                out.push(p.grad.clone());
            }
        });
        Ok(out)
    });
    Case { names, vars, eval, grad }
}

fn randomize_all<M: Parameters<f64>, R: Rng>(m: &mut M, rng: &mut R) {
    m.visit_mut("", &mut |name, p| {
        if name.ends_with("running_var") || name.ends_with("gamma") {
            p.value.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        } else {
            p.value.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    });
}

fn pool_case(axes: PoolAxes, rng: &mut ChaCha8Rng) -> Result<Case> {
    let s = rand_shape(rng, 1);
    let x = Tensor::randn(s, 1.0, rng);
    Ok(unary(s, x, move |x| Ok(avg_pool(x, axes)), move |x, g| Ok(avg_pool_backward(g, x.shape(), axes))))
}

fn fc_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let s = rand_shape(rng, 1);
    let shape = Shape::new(s.n(), 1, 1, 1, s.c());
    let mut p = LinearParams::<f64>::zeros(rng.gen_range(1..=5), s.c(), rng.gen_bool(0.5));
    randomize_all(&mut p, rng);
    let x = Tensor::randn(shape, 1.0, rng);
    Ok(module_case(
        p,
        x,
        |p, x| fully_connected(x, p),
        |p, x, g| {
            let r = fully_connected_backward(x, p, g)?;
            p.weight.accumulate(&r.weight);
            if let (Some(b), Some(gb)) = (p.bias.as_mut(), r.bias.as_ref()) {
                b.accumulate(gb);
            }
            Ok(r.input)
        },
    ))
}

fn conv_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let groups = [1, 1, 2, 3][rng.gen_range(0..4)];
    let cin = groups * rng.gen_range(1..=2);
    let cout = groups * rng.gen_range(1..=2);
    let k: [usize; 3] = std::array::from_fn(|_| rng.gen_range(1..=3));
    let stride: [usize; 3] = std::array::from_fn(|_| rng.gen_range(1..=2));
    let padding: [usize; 3] = std::array::from_fn(|a| rng.gen_range(0..=k[a] / 2));
    let mut p =
        ConvParams::<f64>::zeros(cout, cin / groups, k, rng.gen_bool(0.5)).with_stride(stride).with_padding(padding);
    p.groups = groups;
    randomize_all(&mut p, rng);
    let s = rand_shape(rng, 1);
    let shape = Shape::new(s.n(), s.t().max(k[0]), s.h().max(k[1]), s.w().max(k[2]), cin);
    let x = Tensor::randn(shape, 1.0, rng);
    Ok(module_case(
        p,
        x,
        |p, x| conv3d(x, p),
        |p, x, g| {
            let r = conv3d_backward(x, p, g)?;
            p.kernel.accumulate(&r.kernel);
            if let (Some(b), Some(gb)) = (p.bias.as_mut(), r.bias.as_ref()) {
                b.accumulate(gb);
            }
            Ok(r.input)
        },
    ))
}

fn sigmoid_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let s = rand_shape(rng, 1);
    let x = Tensor::randn(s, 2.0, rng);
    Ok(unary(s, x, |x| Ok(sigmoid(x)), |x, g| Ok(sigmoid_backward(&sigmoid(x), g))))
}

fn relu_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let s = rand_shape(rng, 1);
    let x = away_from_zero(s, rng);
    Ok(unary(s, x, |x| Ok(relu(x)), |x, g| Ok(relu_backward(x, g))))
}

fn gate_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let s = rand_shape(rng, 1);
    let gs = Shape(std::array::from_fn(|a| if a == 0 || a == 4 || rng.gen_bool(0.5) { s.0[a] } else { 1 }));
    let x = Tensor::randn(s, 1.0, rng);
    let g = Tensor::uniform(gs, 0.05, 0.95, rng);
    Ok(Case {
        names: vec!["x".into(), "gate".into()],
        vars: vec![x.into_data(), g.into_data()],
        eval: Box::new(move |v| gate_apply(&Tensor::from_vec(s, v[0].clone())?, &Tensor::from_vec(gs, v[1].clone())?)),
        grad: Box::new(move |v, w| {
            let (dx, dg) =
                gate_apply_backward(&Tensor::from_vec(s, v[0].clone())?, &Tensor::from_vec(gs, v[1].clone())?, w)?;
            Ok(vec![dx.into_data(), dg.into_data()])
        }),
    })
}

fn bn_case(mode: Mode, rng: &mut ChaCha8Rng) -> Result<Case> {
    let s = rand_shape(rng, 2);
    let mut p = BatchNormParams::<f64>::new(s.c());
    randomize_all(&mut p, rng);
    let x = Tensor::randn(s, 1.0, rng);
    let x = x.zip_map(&Tensor::uniform(s, -1.0, 1.0, rng), |a, b| a + b)?;
    Ok(module_case(
        p,
        x,
        move |p, x| Ok(batch_norm(x, p, mode)?.0),
        move |p, x, g| {
            let (_, cache) = batch_norm(x, &mut p.clone(), mode)?;
            let r = batch_norm_backward(g, p, &cache)?;
            p.gamma.accumulate(&r.gamma);
            p.beta.accumulate(&r.beta);
            Ok(r.input)
        },
    ))
}

fn shift_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let s = rand_shape(rng, 1);
    let ratio = [Ratio::new(1, 8), Ratio::new(1, 4), Ratio::new(1, 3), Ratio::new(1, 2)][rng.gen_range(0..4)];
    let x = Tensor::randn(s, 1.0, rng);
    Ok(unary(s, x, move |x| temporal_shift(x, ratio), move |_, g| temporal_shift_backward(g, ratio)))
}

fn max_pool_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let s = rand_shape(rng, 1);
    let k: [usize; 3] = std::array::from_fn(|a| rng.gen_range(1..=3).min([s.t(), s.h(), s.w()][a]));
    let spec = MaxPoolSpec {
        kernel: k,
        stride: std::array::from_fn(|_| rng.gen_range(1..=2)),
        padding: std::array::from_fn(|a| rng.gen_range(0..=(k[a] - 1) / 2)),
    };
    let x = well_separated(s, rng);
    Ok(unary(
        s,
        x,
        move |x| Ok(max_pool(x, &spec)?.0),
        move |x, g| {
            let (_, argmax) = max_pool(x, &spec)?;
            Ok(max_pool_backward(g, x.shape(), &argmax))
        },
    ))
}

fn upsample_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let fine = rand_shape(rng, 1);
    let coarse =
        Shape(std::array::from_fn(|a| if a == 0 || a == 4 { fine.0[a] } else { rng.gen_range(1..=fine.0[a]) }));
    let x = Tensor::randn(coarse, 1.0, rng);
    Ok(unary(coarse, x, move |x| upsample_nearest(x, fine), move |x, g| Ok(upsample_nearest_backward(g, x.shape()))))
}

fn split_concat_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let s = rand_shape(rng, 1);
    let s = s.with_c(s.c().max(2));
    let cut = rng.gen_range(1..s.c());
    let x = Tensor::randn(s, 1.0, rng);
    // Swap the two channel groups: exercises split and concat together.
    let f = move |x: &Tensor<f64>| {
        let parts = split_channels(x, &[cut, x.shape().c() - cut])?;
        concat_channels(&[parts[1].clone(), parts[0].clone()])
    };
    Ok(unary(s, x, f, move |_, g| {
        let parts = split_channels(g, &[s.c() - cut, cut])?;
        concat_channels(&[parts[1].clone(), parts[0].clone()])
    }))
}

/// A calibrator with its cache, so forward and backward can be paired.
#[derive(Clone)]
struct CalibOp {
    spec: CalibratorSpec<f64>,
    mode: Mode,
}

impl Parameters<f64> for CalibOp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &crate::param::Param<f64>)) {
        self.spec.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut crate::param::Param<f64>)) {
        self.spec.visit_mut(prefix, f)
    }
}

fn calibrator_case(kind: CalibratorKind, rng: &mut ChaCha8Rng) -> Result<Case> {
    let s = rand_shape(rng, 2);
    let c = if kind == CalibratorKind::Se3d { rng.gen_range(1..=5) * 4 } else { s.c() };
    let s = s.with_c(c);
    let mut spec = CalibratorSpec::<f64>::zeros(kind, c, true)?;
    spec.init(rng);
    randomize_all(&mut spec, rng);
    let op = CalibOp { spec, mode: Mode::Train };
    let x = Tensor::randn(s, 1.0, rng);
    Ok(module_case(
        op,
        x,
        |op, x| Ok(calibrate(x, &mut op.spec, op.mode)?.0),
        |op, x, g| {
            let mut fresh = op.spec.clone();
            let (_, cache) = calibrate(x, &mut fresh, op.mode)?;
            calibrate_backward(g, &mut op.spec, &cache)
        },
    ))
}

fn ecal(kind: CalibratorKind) -> impl Fn(&mut ChaCha8Rng) -> Result<Case> {
    move |rng| calibrator_case(kind, rng)
}

#[derive(Clone)]
struct GcOp(GcModule<f64>);

impl Parameters<f64> for GcOp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &crate::param::Param<f64>)) {
        self.0.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut crate::param::Param<f64>)) {
        self.0.visit_mut(prefix, f)
    }
}

fn gc_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (p, placement) = [
        (Ratio::new(1, 4), Placement::Standard),
        (Ratio::new(1, 2), Placement::Standard),
        (Ratio::new(1, 2), Placement::Loop),
        (Ratio::from_integer(1), Placement::Standard),
    ][rng.gen_range(0..4)];
    let c = (4 * rng.gen_range(1..=2) * *p.denom()) / *p.numer();
    let s = rand_shape(rng, 2).with_c(c);
    let cfg = GcConfig::new(p, placement)?.with_batchnorm(rng.gen_bool(0.5));
    let mut gc = GcModule::<f64>::new(&cfg, c, rng.gen_range(0..4))?;
    gc.init(rng);
    randomize_all(&mut gc, rng);
    let x = Tensor::randn(s, 1.0, rng);
    Ok(module_case(GcOp(gc), x, |m, x| m.0.forward(x, Mode::Eval), |m, _, g| m.0.backward(g)))
}

#[derive(Clone)]
struct BlockOp(Bottleneck<f64>);

impl Parameters<f64> for BlockOp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &crate::param::Param<f64>)) {
        self.0.visit(prefix, f)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut crate::param::Param<f64>)) {
        self.0.visit_mut(prefix, f)
    }
}

fn bottleneck_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let style = BlockStyle::ALL[rng.gen_range(0..3)];
    let width = 8;
    let in_channels = [8, 32][rng.gen_range(0..2)];
    let cfg = GcConfig::new(Ratio::new(1, 2), Placement::Loop)?;
    let spec = BlockSpec {
        style,
        width,
        in_channels,
        out_channels: 4 * width,
        stride: rng.gen_range(1..=2),
        site: SiteSpec::Gc { cfg, site_index: rng.gen_range(0..2) },
        shift_ratio: Ratio::new(1, 4),
    };
    let mut block = Bottleneck::<f64>::new(spec)?;
    block.init(rng);
    randomize_all(&mut block, rng);
    let s = Shape::new(2, rng.gen_range(1..=3), rng.gen_range(2..=4), rng.gen_range(2..=4), in_channels);
    let x = Tensor::randn(s, 1.0, rng);
    Ok(module_case(BlockOp(block), x, |m, x| m.0.forward(x, Mode::Eval), |m, _, g| m.0.backward(g)))
}

/// Composite checks with internal ReLUs whose kinks the inputs cannot avoid.
pub const PIECEWISE: [&str; 1] = ["bottleneck"];

/// Names of every check, in run order.
pub fn check_names() -> Vec<&'static str> {
    registry().into_iter().map(|(n, _)| n).collect()
}

type BoxBuilder = Box<dyn Fn(&mut ChaCha8Rng) -> Result<Case>>;

fn registry() -> Vec<(&'static str, BoxBuilder)> {
    vec![
        ("pool_global", Box::new(|r: &mut ChaCha8Rng| pool_case(PoolAxes::Global, r))),
        ("pool_over_time", Box::new(|r: &mut ChaCha8Rng| pool_case(PoolAxes::Time, r))),
        ("pool_over_space", Box::new(|r: &mut ChaCha8Rng| pool_case(PoolAxes::Space, r))),
        ("fully_connected", Box::new(fc_case)),
        ("conv3d", Box::new(conv_case)),
        ("sigmoid", Box::new(sigmoid_case)),
        ("relu", Box::new(relu_case)),
        ("gate_apply", Box::new(gate_case)),
        ("batch_norm_train", Box::new(|r: &mut ChaCha8Rng| bn_case(Mode::Train, r))),
        ("batch_norm_eval", Box::new(|r: &mut ChaCha8Rng| bn_case(Mode::Eval, r))),
        ("temporal_shift", Box::new(shift_case)),
        ("max_pool", Box::new(max_pool_case)),
        ("upsample_nearest", Box::new(upsample_case)),
        ("split_concat", Box::new(split_concat_case)),
        ("ecal_g", Box::new(ecal(CalibratorKind::EcalG))),
        ("ecal_s", Box::new(ecal(CalibratorKind::EcalS))),
        ("ecal_t", Box::new(ecal(CalibratorKind::EcalT))),
        ("ecal_l", Box::new(ecal(CalibratorKind::EcalL))),
        ("se3d", Box::new(ecal(CalibratorKind::Se3d))),
        ("ge3d_g", Box::new(ecal(CalibratorKind::Ge3dG))),
        ("ge3d_c", Box::new(ecal(CalibratorKind::Ge3dC))),
        ("s3d_g", Box::new(ecal(CalibratorKind::S3dG))),
        ("gc_module", Box::new(gc_case)),
        ("bottleneck", Box::new(bottleneck_case)),
    ]
}

/// Runs the checks whose names contain `filter` (all when `None`).
pub fn run(cfg: &GradcheckConfig, filter: Option<&str>) -> Result<Vec<CheckResult>> {
    if cfg.trials == 0 {
        return Err(config_err!("gradcheck needs at least one trial"));
    }
    if let Some(f) = &cfg.inject_fault {
        if !check_names().contains(&f.as_str()) {
            return Err(config_err!("unknown check '{f}' for fault injection"));
        }
    }
    let mut results = Vec::new();
    for (ci, (name, build)) in registry().into_iter().enumerate() {
        let piecewise = PIECEWISE.contains(&name);
        if filter.is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let faulty = cfg.inject_fault.as_deref() == Some(name);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(ci as u64));
        let mut worst = (0.0f64, String::from("-"));
        let (mut coords, mut skipped) = (0, 0);
        for _ in 0..cfg.trials {
            let case = build(&mut rng)?;
            let o = run_case(&case, cfg, faulty, piecewise, &mut rng)?;
            coords += o.coords;
            skipped += o.skipped;
            if o.worst > worst.0 || o.worst.is_nan() {
                worst = (o.worst, o.desc);
            }
        }
        results.push(CheckResult {
            name: name.to_string(),
            trials: cfg.trials,
            coords,
            skipped,
            passed: worst.0 < cfg.rel_tol,
            max_rel_error: worst.0,
            worst: worst.1,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coord_error_floor() {
        assert_eq!(coord_error(1e-9, 0.0, 1e-8), 0.0);
        assert!((coord_error(1.0, 1.1, 1e-8) - 0.1 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn quick_pass_and_injected_fault() {
        let cfg = GradcheckConfig { trials: 2, ..Default::default() };
        let r = run(&cfg, Some("sigmoid")).unwrap();
        assert!(r[0].passed, "{r:?}");
        let bad = GradcheckConfig { inject_fault: Some("sigmoid".into()), ..cfg };
        let r = run(&bad, Some("sigmoid")).unwrap();
        assert!(!r[0].passed);
    }
}
