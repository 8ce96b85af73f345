//! The invariant suite behind `gcnet selftest`.

use std::fmt::Write as _;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::accounting::{self, model_count, verify_against_enumeration, CountingMode};
use crate::backbone::{BlockStyle, CalibratorChoice, Model, NetworkSpec};
use crate::calib::{calibrate, chunk_assignment, CalibratorKind, CalibratorSpec, GcConfig, GcModule, Placement};
use crate::ops::{self, BatchNormParams, ConvParams, LinearParams, MaxPoolSpec, Mode, PoolAxes};
use crate::reference;
use crate::tensor::{Shape, Tensor};

/// Forward kernels must agree with the naive references to this much.
pub const ORACLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub outcomes: Vec<Outcome>,
}

impl Report {
    pub fn passed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.passed).count()
    }

    pub fn all_passed(&self) -> bool {
        self.passed() == self.outcomes.len()
    }

    pub fn summary_line(&self) -> String {
        let word = if self.all_passed() { "PASS" } else { "FAIL" };
        format!("{word} {}/{}", self.passed(), self.outcomes.len())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for o in &self.outcomes {
            let _ = writeln!(s, "{:<4} {:<28} {}", if o.passed { "ok" } else { "FAIL" }, o.name, o.detail);
        }
        s.push_str(&self.summary_line());
        s.push('\n');
        s
    }
}

type Check = fn(&mut ChaCha8Rng) -> Result<String, String>;

fn checks() -> Vec<(&'static str, Check)> {
    vec![
        ("ecal closed forms", closed_forms),
        ("percentage table", percentages),
        ("network totals", network_totals),
        ("overhead claim", overhead),
        ("placement invariance", placement_invariance),
        ("enumeration cross-check", enumeration),
        ("kernel oracles", kernel_oracles),
        ("calibrator oracles", calibrator_oracles),
        ("gc oracle", gc_oracle),
        ("loop period", loop_period),
        ("identity properties", identities),
        ("gate range and axes", gate_axes),
    ]
}

/// Runs every check with a fixed seed; deterministic.
pub fn run(seed: u64) -> Report {
    let mut outcomes = Vec::new();
    for (i, (name, check)) in checks().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let (passed, detail) = match check(&mut rng) {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        outcomes.push(Outcome { name, passed, detail });
    }
    Report { outcomes }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn r(n: usize, d: usize) -> Ratio<usize> {
    Ratio::new(n, d)
}

fn closed_forms(_: &mut ChaCha8Rng) -> Result<String, String> {
    let coef = [
        (CalibratorKind::EcalG, 1),
        (CalibratorKind::EcalS, 9),
        (CalibratorKind::EcalT, 3),
        (CalibratorKind::EcalL, 3),
    ];
    let mut n = 0;
    for p in [r(1, 4), r(1, 2), r(1, 1)] {
        for c in [64usize, 128, 256, 512] {
            let pc2 = (p * c).to_integer().pow(2) as u64;
            for (k, num) in coef {
                let got = accounting::ecal_param_count(k, p, c, CountingMode::Paper).map_err(|e| e.to_string())?;
                ensure(got * 16 == num * pc2, || format!("{k} p={p} C={c}: {got}"))?;
                n += 1;
            }
            let total = accounting::gc_param_count(p, c, CountingMode::Paper).map_err(|e| e.to_string())?;
            ensure(total == pc2, || format!("GC p={p} C={c}: {total}"))?;
        }
    }
    Ok(format!("{n} closed forms exact"))
}

fn percentages(_: &mut ChaCha8Rng) -> Result<String, String> {
    let want = [(r(1, 2), [0.09, 0.83, 0.28, 0.28, 1.47]), (r(1, 1), [0.37, 3.31, 1.10, 1.10, 5.88])];
    for (p, vals) in want {
        let rows = accounting::percentage_table(p).map_err(|e| e.to_string())?;
        for (row, v) in rows.iter().zip(vals) {
            ensure((row.percent - v).abs() <= 0.005, || format!("p={p} {}: {:.4} vs {v}", row.name, row.percent))?;
        }
    }
    Ok("p=1/2 and p=1 within 0.005pp".into())
}

/// `(label, spec, params M, MACs G)` rows of the published depth-50 totals.
pub fn published_totals() -> Vec<(&'static str, NetworkSpec, f64, f64)> {
    let gc = |style, p| NetworkSpec::resnet50(style).with_gc(p, Placement::Standard).expect("legal p");
    let single = |k| {
        NetworkSpec::resnet50(BlockStyle::Tsn)
            .with_calibrator(CalibratorChoice::Gc(GcConfig::single(k, r(1, 1)).expect("legal p")))
    };
    vec![
        ("TSN", NetworkSpec::resnet50(BlockStyle::Tsn), 23.9, 32.9),
        ("GC-TSN p=1/2", gc(BlockStyle::Tsn, r(1, 2)), 24.2, 33.0),
        ("GC-TSN p=1", gc(BlockStyle::Tsn, r(1, 1)), 25.1, 33.3),
        ("GST", NetworkSpec::resnet50(BlockStyle::Gst), 21.0, 29.2),
        ("GC-GST p=1", gc(BlockStyle::Gst, r(1, 1)), 22.3, 29.6),
        ("ECal-S only p=1", single(CalibratorKind::EcalS), 24.6, 33.0),
        ("ECal-T only p=1", single(CalibratorKind::EcalT), 24.1, 32.9),
    ]
}

fn network_totals(_: &mut ChaCha8Rng) -> Result<String, String> {
    let rows = published_totals();
    for (label, spec, pm, mg) in &rows {
        let rep = model_count(spec).map_err(|e| e.to_string())?;
        let (gotp, gotm) = (rep.params as f64 / 1e6, rep.macs as f64 / 1e9);
        ensure((rep.params_m() - pm).abs() < 1e-9 && (rep.macs_g() - mg).abs() < 1e-9, || {
            format!("{label}: {gotp:.3}M {gotm:.3}G, expected {pm}M {mg}G")
        })?;
    }
    Ok(format!("{} rows at 0.1M / 0.1G", rows.len()))
}

fn overhead(_: &mut ChaCha8Rng) -> Result<String, String> {
    let spec =
        NetworkSpec::resnet50(BlockStyle::Tsn).with_gc(r(1, 1), Placement::Standard).map_err(|e| e.to_string())?;
    let (dp, dm) = model_count(&spec).map_err(|e| e.to_string())?.overhead().ok_or("no baseline")?;
    ensure((dp - 5.3).abs() <= 0.3 && (dm - 1.3).abs() <= 0.3, || format!("{dp:.3}% / {dm:.3}%"))?;
    Ok(format!("params +{dp:.2}%, MACs +{dm:.2}%"))
}

fn placement_invariance(_: &mut ChaCha8Rng) -> Result<String, String> {
    for style in BlockStyle::ALL {
        for p in [r(1, 2), r(1, 1)] {
            let a = NetworkSpec::resnet50(style).with_gc(p, Placement::Standard).map_err(|e| e.to_string())?;
            let b = NetworkSpec::resnet50(style).with_gc(p, Placement::Loop).map_err(|e| e.to_string())?;
            let (ra, rb) = (model_count(&a).map_err(|e| e.to_string())?, model_count(&b).map_err(|e| e.to_string())?);
            ensure(ra == rb, || format!("{style} p={p}: reports differ"))?;
        }
    }
    Ok("standard == loop for 3 styles x 2 ratios".into())
}

/// The 3 styles x {0, 1/2, 1} x {standard, loop} matrix, skipping loop at p = 0.
pub fn enumeration_matrix() -> Vec<NetworkSpec> {
    let mut out = Vec::new();
    for style in BlockStyle::ALL {
        out.push(NetworkSpec::resnet50(style));
        for p in [r(1, 2), r(1, 1)] {
            for placement in [Placement::Standard, Placement::Loop] {
                out.push(NetworkSpec::resnet50(style).with_gc(p, placement).expect("legal p"));
            }
        }
    }
    out
}

fn enumeration(_: &mut ChaCha8Rng) -> Result<String, String> {
    let specs = enumeration_matrix();
    for spec in &specs {
        let model = Model::<f32>::zeros(spec).map_err(|e| e.to_string())?;
        let rep = model_count(spec).map_err(|e| e.to_string())?;
        verify_against_enumeration(&model, &rep).map_err(|bad| {
            format!("{}: {}", spec.to_config(), bad.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("; "))
        })?;
    }
    Ok(format!("{} specs exact", specs.len()))
}

fn random_shape(rng: &mut ChaCha8Rng, c: usize) -> Shape {
    Shape::new(rng.gen_range(1..=3), rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=6), c)
}

fn compare(what: &str, fast: &Tensor<f64>, slow: &Tensor<f64>) -> Result<f64, String> {
    ensure(fast.shape() == slow.shape(), || format!("{what}: shape {} vs {}", fast.shape(), slow.shape()))?;
    let d = fast.max_abs_diff(slow);
    ensure(d <= ORACLE_TOL, || format!("{what}: max diff {d:e}"))?;
    Ok(d)
}

/// Trials per oracle comparison.
const TRIALS: usize = 10;

fn kernel_oracles(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst = 0.0f64;
    let mut n = 0;
    for _ in 0..TRIALS {
        let c = rng.gen_range(1..=6);
        let s = random_shape(rng, c);
        let x = Tensor::<f64>::randn(s, 1.0, rng);
        let mut cmp = |what: &str, a: &Tensor<f64>, b: &Tensor<f64>| -> Result<(), String> {
            worst = worst.max(compare(what, a, b)?);
            n += 1;
            Ok(())
        };
        for axes in [PoolAxes::Global, PoolAxes::Time, PoolAxes::Space] {
            cmp("avg_pool", &ops::avg_pool(&x, axes), &reference::pool(&x, axes))?;
        }
        cmp("sigmoid", &ops::sigmoid(&x), &reference::sigmoid(&x))?;
        cmp("relu", &ops::relu(&x), &reference::relu(&x))?;

        let cout = rng.gen_range(1..=6);
        let fc = LinearParams::normal(cout, c, 1.0, true, rng);
        let pooled = ops::pool_global(&x);
        cmp(
            "fully_connected",
            &ops::fully_connected(&pooled, &fc).map_err(|e| e.to_string())?,
            &reference::fully_connected(&pooled, &fc),
        )?;

        let k = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)];
        let groups = if c % 2 == 0 && cout % 2 == 0 && rng.gen_bool(0.5) { 2 } else { 1 };
        let mut conv = ConvParams::zeros(cout, c / groups, k, rng.gen_bool(0.5));
        conv.groups = groups;
        conv = conv.with_stride([rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=2)]);
        conv = conv.with_padding(k.map(|v| rng.gen_range(0..v)));
        conv.kernel.value.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        if let Some(b) = &mut conv.bias {
            b.value.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        let fits = (0..3).all(|a| [s.t(), s.h(), s.w()][a] + 2 * conv.padding[a] >= k[a]);
        if fits {
            cmp("conv3d", &ops::conv3d(&x, &conv).map_err(|e| e.to_string())?, &reference::conv3d(&x, &conv))?;
        }

        let mut bn = BatchNormParams::<f64>::new(c);
        bn.gamma.value.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        bn.beta.value.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        bn.running_mean.value.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        bn.running_var.value.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        let ev = ops::batch_norm(&x, &mut bn.clone(), Mode::Eval).map_err(|e| e.to_string())?.0;
        cmp("batch_norm eval", &ev, &reference::batch_norm(&x, &bn, false))?;
        let tr = ops::batch_norm(&x, &mut bn.clone(), Mode::Train).map_err(|e| e.to_string())?.0;
        cmp("batch_norm train", &tr, &reference::batch_norm(&x, &bn, true))?;

        let ratio = r(rng.gen_range(0..=2), 4);
        if ops::shift_fold(c, ratio).is_ok() {
            cmp(
                "temporal_shift",
                &ops::temporal_shift(&x, ratio).map_err(|e| e.to_string())?,
                &reference::temporal_shift(&x, ratio),
            )?;
        }
        if s.h() >= 2 && s.w() >= 2 {
            let mp = MaxPoolSpec::STEM;
            cmp("max_pool", &ops::max_pool(&x, &mp).map_err(|e| e.to_string())?.0, &reference::max_pool(&x, &mp))?;
        }
        let g = Tensor::<f64>::uniform(Shape::new(s.n(), 1, s.h(), s.w(), c), 0.0, 1.0, rng);
        cmp("gate_apply", &ops::gate_apply(&x, &g).map_err(|e| e.to_string())?, &reference::gate(&x, &g))?;
        let coarse = Tensor::<f64>::randn(
            Shape::new(s.n(), s.t().div_ceil(2), s.h().div_ceil(2), s.w().div_ceil(2), c),
            1.0,
            rng,
        );
        cmp(
            "upsample_nearest",
            &ops::upsample_nearest(&coarse, s).map_err(|e| e.to_string())?,
            &reference::upsample_nearest(&coarse, s),
        )?;
    }
    Ok(format!("{n} comparisons, max diff {worst:.1e}"))
}

fn random_calibrator(
    kind: CalibratorKind,
    c: usize,
    bn: bool,
    rng: &mut ChaCha8Rng,
) -> Result<CalibratorSpec<f64>, String> {
    let mut spec = CalibratorSpec::zeros(kind, c, bn).map_err(|e| e.to_string())?;
    spec.init(rng);
    spec.jitter(rng);
    Ok(spec)
}

trait Jitter {
    fn jitter(&mut self, rng: &mut ChaCha8Rng);
}

impl Jitter for CalibratorSpec<f64> {
    /// Random biases and BN affine terms, so they are exercised too.
    fn jitter(&mut self, rng: &mut ChaCha8Rng) {
        use crate::param::Parameters;
        self.visit_mut("", &mut |name, p| {
            if name.ends_with("bias") || name.ends_with("beta") {
                p.value.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
            } else if name.ends_with("gamma") {
                p.value.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
            }
        });
    }
}

fn calibrator_oracles(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst = 0.0f64;
    let kinds = CalibratorKind::ECALS.into_iter().chain(CalibratorKind::COMPARISON);
    let mut n = 0;
    for kind in kinds {
        for _ in 0..TRIALS {
            let c = rng.gen_range(1..=6);
            let s = random_shape(rng, c);
            let x = Tensor::<f64>::randn(s, 1.0, rng);
            let mut spec = random_calibrator(kind, c, rng.gen_bool(0.5), rng)?;
            let slow = reference::calibrate(&x, &spec);
            let (fast, _) = calibrate(&x, &mut spec, Mode::Train).map_err(|e| e.to_string())?;
            worst = worst.max(compare(kind.name(), &fast, &slow)?);
            n += 1;
        }
    }
    Ok(format!("{n} comparisons, max diff {worst:.1e}"))
}

fn gc_oracle(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst = 0.0f64;
    let mut n = 0;
    for _ in 0..3 * TRIALS {
        let p = [r(1, 4), r(1, 2), r(1, 1)][rng.gen_range(0..3)];
        let placement = if rng.gen_bool(0.5) { Placement::Loop } else { Placement::Standard };
        let n_chunks = 4 * *p.denom() / *p.numer();
        let chunk = rng.gen_range(1..=2);
        let c = n_chunks * chunk;
        let cfg = GcConfig::new(p, placement).map_err(|e| e.to_string())?.with_batchnorm(rng.gen_bool(0.5));
        let site = rng.gen_range(0..20);
        let mut gc = GcModule::<f64>::new(&cfg, c, site).map_err(|e| e.to_string())?;
        gc.init(rng);
        for (_, spec) in &mut gc.calibrators {
            spec.jitter(rng);
        }
        let mut s = random_shape(rng, c);
        s.0[4] = c;
        let x = Tensor::<f64>::randn(s, 1.0, rng);
        let slow = reference::gc_forward(&x, &cfg, site, &gc.calibrators);
        let fast = gc.forward(&x, Mode::Train).map_err(|e| e.to_string())?;
        worst = worst.max(compare("gc_forward", &fast, &slow)?);
        n += 1;
    }
    Ok(format!("{n} comparisons, max diff {worst:.1e}"))
}

fn loop_period(_: &mut ChaCha8Rng) -> Result<String, String> {
    for p in [r(1, 4), r(1, 2), r(1, 1)] {
        let cfg = GcConfig::new(p, Placement::Loop).map_err(|e| e.to_string())?;
        let period = cfg.n_chunks().map_err(|e| e.to_string())?;
        let at = |b| chunk_assignment(&cfg, b).map_err(|e| e.to_string());
        for b in 0..2 * period {
            ensure(at(b)? == at(b + period)?, || format!("p={p}: site {b} differs from {}", b + period))?;
            for d in 1..period {
                ensure(at(b)? != at(b + d)?, || format!("p={p}: period shorter than {period}"))?;
            }
        }
    }
    Ok("period 16, 8, 4 for p = 1/4, 1/2, 1".into())
}

fn identities(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let s = Shape::new(2, 3, 4, 4, 8);
    let x = Tensor::<f64>::randn(s, 1.0, rng);
    let parts = ops::split_channels(&x, &[2, 2, 2, 2]).map_err(|e| e.to_string())?;
    ensure(ops::concat_channels(&parts).map_err(|e| e.to_string())? == x, || "split/concat not bit-exact".into())?;
    let ones = Tensor::full(Shape::new(2, 1, 1, 1, 8), 1.0);
    ensure(ops::gate_apply(&x, &ones).map_err(|e| e.to_string())? == x, || "gate of ones is not identity".into())?;
    ensure(ops::temporal_shift(&x, r(0, 1)).map_err(|e| e.to_string())? == x, || {
        "fold 0 shift is not identity".into()
    })?;

    let zero = GcConfig::new(r(0, 1), Placement::Standard).map_err(|e| e.to_string())?;
    let mut gc = GcModule::<f64>::new(&zero, 8, 0).map_err(|e| e.to_string())?;
    ensure(gc.forward(&x, Mode::Train).map_err(|e| e.to_string())? == x, || "p = 0 GC is not identity".into())?;

    let cfg = GcConfig::new(r(1, 2), Placement::Loop).map_err(|e| e.to_string())?;
    for site in 0..8 {
        let mut gc = GcModule::<f64>::new(&cfg, 8, site).map_err(|e| e.to_string())?;
        let y = gc.forward(&x, Mode::Eval).map_err(|e| e.to_string())?;
        let calibrated: Vec<usize> = gc.assignment().map_err(|e| e.to_string())?.iter().map(|a| a.1).collect();
        for (i, (&a, &b)) in x.data().iter().zip(y.data()).enumerate() {
            let chunk = i % 8;
            let want = if calibrated.contains(&chunk) { a * 0.5 } else { a };
            ensure(b == want, || format!("zero GC at site {site}, channel {}: {b} vs {want}", i % 8))?;
        }
    }
    Ok("split/concat, unit gate, fold 0, p = 0, zero-parameter x/2".into())
}

fn gate_axes(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let s = Shape::new(2, 4, 5, 5, 3);
    for kind in CalibratorKind::ECALS {
        let x = Tensor::<f64>::randn(s, 2.0, rng);
        let mut spec = random_calibrator(kind, 3, false, rng)?;
        let (_, cache) = calibrate(&x, &mut spec, Mode::Train).map_err(|e| e.to_string())?;
        let g = cache.gate;
        ensure(g.data().iter().all(|&v| v > 0.0 && v < 1.0), || format!("{kind}: gate outside (0,1)"))?;
        let [gt, gh, gw] = [g.shape().t(), g.shape().h(), g.shape().w()];
        let want = match kind {
            CalibratorKind::EcalG => [1, 1, 1],
            CalibratorKind::EcalS => [1, 5, 5],
            CalibratorKind::EcalT => [4, 1, 1],
            _ => [4, 5, 5],
        };
        ensure([gt, gh, gw] == want, || format!("{kind}: gate extents {:?}, expected {want:?}", [gt, gh, gw]))?;
    }
    Ok("gates in (0,1) with pooled axes collapsed".into())
}

#[cfg(test)]
mod tests {
    #[test]
    fn suite_passes() {
        let rep = super::run(0);
        eprint!("{}", rep.render());
        assert!(rep.all_passed());
    }
}
