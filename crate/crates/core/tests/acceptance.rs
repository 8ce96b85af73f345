//! One PASS/FAIL line per acceptance criterion.

use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use gc_core::accounting::{ecal_param_count, model_count, percentage_table, verify_against_enumeration, CountingMode};
use gc_core::backbone::{BlockStyle, CalibratorChoice, Model, NetworkSpec};
use gc_core::calib::{calibrate, CalibratorKind, CalibratorSpec, GcConfig, GcModule, Placement};
use gc_core::gradcheck::{self, GradcheckConfig};
use gc_core::io::WeightFile;
use gc_core::ops::Mode;
use gc_core::selftest;
use gc_core::toybench::{run_toy, Family, ToyRun, ToySetup, TrainConfig, Variant};
use gc_core::{Parameters, Shape, Tensor};

type Verdict = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn r(n: usize, d: usize) -> Ratio<usize> {
    Ratio::new(n, d)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn closed_forms() -> Verdict {
    let sixteenths = [
        (CalibratorKind::EcalG, 1),
        (CalibratorKind::EcalS, 9),
        (CalibratorKind::EcalT, 3),
        (CalibratorKind::EcalL, 3),
    ];
    for p in [r(1, 4), r(1, 2), r(1, 1)] {
        for c in [64usize, 128, 256, 512] {
            let pc = (p * c).to_integer() as u64;
            let mut sum = 0;
            for (k, num) in sixteenths {
                let got = ecal_param_count(k, p, c, CountingMode::Paper).map_err(|e| e.to_string())?;
                check(16 * got == num * pc * pc, || format!("{k} p={p} C={c}: {got}"))?;
                sum += got;
            }
            check(sum == pc * pc, || format!("sum p={p} C={c}: {sum}"))?;
        }
    }
    let tables = [(r(1, 2), [0.09, 0.83, 0.28, 0.28, 1.47]), (r(1, 1), [0.37, 3.31, 1.10, 1.10, 5.88])];
    for (p, want) in tables {
        let rows = percentage_table(p).map_err(|e| e.to_string())?;
        check(rows.len() == 5, || format!("{} rows", rows.len()))?;
        for (row, w) in rows.iter().zip(want) {
            check((row.percent - w).abs() <= 0.005, || format!("p={p} {}: {:.4}% vs {w}%", row.name, row.percent))?;
        }
    }
    Ok("48 closed forms exact; both percentage tables within 0.005pp".into())
}

fn tsn(p: Option<Ratio<usize>>, placement: Placement) -> NetworkSpec {
    let base = NetworkSpec::resnet50(BlockStyle::Tsn);
    match p {
        Some(p) => base.with_gc(p, placement).unwrap(),
        None => base,
    }
}

fn model_totals() -> Verdict {
    let single = |k| {
        NetworkSpec::resnet50(BlockStyle::Tsn)
            .with_calibrator(CalibratorChoice::Gc(GcConfig::single(k, r(1, 1)).unwrap()))
    };
    let gst = |p: Option<Ratio<usize>>| {
        let base = NetworkSpec::resnet50(BlockStyle::Gst);
        p.map_or(base.clone(), |p| base.with_gc(p, Placement::Standard).unwrap())
    };
    let rows = [
        ("TSN", tsn(None, Placement::Standard), 23.9, 32.9),
        ("GC-TSN p=1/2", tsn(Some(r(1, 2)), Placement::Standard), 24.2, 33.0),
        ("GC-TSN p=1", tsn(Some(r(1, 1)), Placement::Standard), 25.1, 33.3),
        ("GST", gst(None), 21.0, 29.2),
        ("GC-GST p=1", gst(Some(r(1, 1))), 22.3, 29.6),
        ("ECal-S only", single(CalibratorKind::EcalS), 24.6, 33.0),
        ("ECal-T only", single(CalibratorKind::EcalT), 24.1, 32.9),
    ];
    let mut shown = Vec::new();
    for (label, spec, pm, mg) in rows {
        check(spec.frames == 8 && spec.resolution == 224 && spec.num_classes == 174, || {
            format!("{label}: input geometry")
        })?;
        let rep = model_count(&spec).map_err(|e| e.to_string())?;
        let (gp, gm) = (rep.params as f64 / 1e6, rep.macs as f64 / 1e9);
        check((gp - pm).abs() <= 0.05 + 1e-9 && (gm - mg).abs() <= 0.05 + 1e-9, || {
            format!("{label}: {gp:.3}M / {gm:.3}G, expected {pm}M / {mg}G")
        })?;
        if let CalibratorChoice::Gc(cfg) = &spec.calibrator {
            let looped = NetworkSpec {
                calibrator: CalibratorChoice::Gc(GcConfig { placement: Placement::Loop, ..cfg.clone() }),
                ..spec.clone()
            };
            let rl = model_count(&looped).map_err(|e| e.to_string())?;
            check((rl.params, rl.macs) == (rep.params, rep.macs), || {
                format!("{label}: loop placement changes counts")
            })?;
        }
        shown.push(format!("{label} {gp:.1}M/{gm:.1}G"));
    }
    Ok(shown.join(", "))
}

fn overhead_claim() -> Verdict {
    let base = model_count(&tsn(None, Placement::Standard)).map_err(|e| e.to_string())?;
    let gc = model_count(&tsn(Some(r(1, 1)), Placement::Standard)).map_err(|e| e.to_string())?;
    let dp = 100.0 * (gc.params as f64 / base.params as f64 - 1.0);
    let dm = 100.0 * (gc.macs as f64 / base.macs as f64 - 1.0);
    check((dp - 5.3).abs() <= 0.3 && (dm - 1.3).abs() <= 0.3, || format!("params +{dp:.3}%, MACs +{dm:.3}%"))?;
    Ok(format!("params +{dp:.2}%, MACs +{dm:.2}%"))
}

fn enumeration() -> Verdict {
    let specs = selftest::enumeration_matrix();
    let styles = BlockStyle::ALL.len();
    check(specs.len() >= 4 * styles, || format!("matrix has only {} specs", specs.len()))?;
    for spec in &specs {
        let model = Model::<f32>::zeros(spec).map_err(|e| e.to_string())?;
        let rep = model_count(spec).map_err(|e| e.to_string())?;
        let direct = model.learned_count() as u64;
        check(direct == rep.params, || {
            format!("{}: enumerated {direct} vs analytic {}", spec.to_config(), rep.params)
        })?;
        verify_against_enumeration(&model, &rep).map_err(|bad| {
            format!("{}: {}", spec.to_config(), bad.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("; "))
        })?;
    }
    Ok(format!("{} specs agree layer by layer", specs.len()))
}

fn gradients() -> Verdict {
    let cfg = GradcheckConfig::default();
    check(cfg.trials >= 20 && cfg.step == 1e-5 && cfg.rel_tol == 1e-5 && cfg.abs_floor == 1e-8, || format!("{cfg:?}"))?;
    let start = Instant::now();
    let results = gradcheck::run(&cfg, None).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    for name in ["conv3d", "fully_connected", "batch_norm_train", "ecal_g", "ecal_s", "ecal_t", "ecal_l", "gc_module"] {
        check(results.iter().any(|c| c.name == name), || format!("{name} not checked"))?;
    }
    let failed: Vec<_> =
        results.iter().filter(|c| !c.passed).map(|c| format!("{} {:.2e}", c.name, c.max_rel_error)).collect();
    check(failed.is_empty(), || failed.join(", "))?;
    check(took < Duration::from_secs(120), || format!("took {:.0}s", took.as_secs_f64()))?;
    let worst = results.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(format!("{} checks x {} trials, worst {worst:.1e}, {:.0}s", results.len(), cfg.trials, took.as_secs_f64()))
}

fn outcomes(names: &[&str], rep: &selftest::Report) -> Verdict {
    let mut details = Vec::new();
    for name in names {
        let o = rep.outcomes.iter().find(|o| o.name == *name).ok_or_else(|| format!("{name} missing"))?;
        check(o.passed, || format!("{name}: {}", o.detail))?;
        details.push(o.detail.clone());
    }
    Ok(details.join("; "))
}

fn oracles(rep: &selftest::Report) -> Verdict {
    check(selftest::ORACLE_TOL <= 1e-12, || "tolerance too loose".into())?;
    outcomes(&["kernel oracles", "calibrator oracles", "gc oracle"], rep)
}

/// A gate stored with extent 1 along an axis is exactly constant along it once broadcast.
fn gate_constancy(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let s = Shape::new(2, 4, 5, 5, 3);
    for kind in CalibratorKind::ECALS {
        let x = Tensor::<f64>::randn(s, 1.0, rng);
        let mut spec = CalibratorSpec::<f64>::zeros(kind, 3, false).map_err(|e| e.to_string())?;
        spec.init(rng);
        let (y, cache) = calibrate(&x, &mut spec, Mode::Eval).map_err(|e| e.to_string())?;
        let g = &cache.gate;
        let want = match kind {
            CalibratorKind::EcalG => [1, 1, 1],
            CalibratorKind::EcalS => [1, 5, 5],
            CalibratorKind::EcalT => [4, 1, 1],
            _ => [4, 5, 5],
        };
        let got = [g.shape().t(), g.shape().h(), g.shape().w()];
        check(got == want && g.shape().n() == 2 && g.shape().c() == 3, || format!("{kind}: gate shape {}", g.shape()))?;
        check(g.data().iter().all(|&v| v > 0.0 && v < 1.0), || format!("{kind}: gate outside (0,1)"))?;
        for n in 0..2 {
            for t in 0..4 {
                for h in 0..5 {
                    for w in 0..5 {
                        for c in 0..3 {
                            let gv = g.at(n, t % want[0], h % want[1], w % want[2], c);
                            let yv = y.at(n, t, h, w, c);
                            check(yv == x.at(n, t, h, w, c) * gv, || {
                                format!("{kind}: output is not x times the broadcast gate")
                            })?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn passthrough(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for p in [r(1, 4), r(1, 2)] {
        let cfg = GcConfig::new(p, Placement::Loop).map_err(|e| e.to_string())?;
        let n_chunks = cfg.n_chunks().map_err(|e| e.to_string())?;
        let c = 2 * n_chunks;
        for site in 0..n_chunks {
            let mut gc = GcModule::<f64>::new(&cfg, c, site).map_err(|e| e.to_string())?;
            gc.init(rng);
            let x = Tensor::<f64>::randn(Shape::new(2, 3, 4, 4, c), 1.0, rng);
            let y = gc.forward(&x, Mode::Train).map_err(|e| e.to_string())?;
            let used: Vec<usize> = gc.assignment().map_err(|e| e.to_string())?.iter().map(|a| a.1).collect();
            for (i, (a, b)) in x.data().iter().zip(y.data()).enumerate() {
                let chunk = (i % c) / 2;
                if !used.contains(&chunk) {
                    check(a.to_bits() == b.to_bits(), || format!("p={p} site {site}: channel {} altered", i % c))?;
                }
            }
        }
    }
    Ok(())
}

fn structure(rep: &selftest::Report) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    gate_constancy(&mut rng)?;
    passthrough(&mut rng)?;
    let d = outcomes(&["loop period", "identity properties", "gate range and axes"], rep)?;
    Ok(format!("constancy axes exact, passthrough bit-exact; {d}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn toy_benchmark() -> Verdict {
    let setup = ToySetup::default();
    check(setup.train.steps <= 3000, || format!("{} steps", setup.train.steps))?;
    check(setup.noise == 0.05 && setup.train_per_class == 400 && setup.val_per_class == 100, || format!("{setup:?}"))?;
    let jobs: Vec<(Variant, u64)> = [Variant::Gc, Variant::NoGc]
        .into_iter()
        .flat_map(|v| (0..3).map(move |s| (v, s)))
        .chain([(Variant::SpatialOnly, 0)])
        .collect();
    let start = Instant::now();
    let runs: Vec<ToyRun> =
        jobs.par_iter().map(|&(v, s)| run_toy(v, s, &setup)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let temporal = Family::Temporal.classes();
    let acc = |v: Variant| runs.iter().filter(|r| r.variant == v).map(|r| r.eval.accuracy).collect::<Vec<_>>();
    for run in &runs {
        println!(
            "  toy {:<6} seed {} accuracy {:.4} temporal {:.4}",
            run.variant,
            run.seed,
            run.eval.accuracy,
            run.eval.accuracy_on(&temporal)
        );
    }
    let (gc, plain) = (acc(Variant::Gc), acc(Variant::NoGc));
    check(gc.iter().all(|&a| a >= 0.90), || format!("GC accuracies {gc:?}"))?;
    check(median(gc.clone()) >= median(plain.clone()), || {
        format!("GC median {} < plain median {}", median(gc.clone()), median(plain.clone()))
    })?;
    let s_only = runs.iter().find(|r| r.variant == Variant::SpatialOnly).unwrap().eval.accuracy_on(&temporal);
    check(s_only <= 0.60, || format!("ECal-S only temporal accuracy {s_only:.3}"))?;
    let full: Vec<f64> =
        runs.iter().filter(|r| r.variant == Variant::Gc).map(|r| r.eval.accuracy_on(&temporal)).collect();
    check(full.iter().all(|&a| a >= 0.85), || format!("GC temporal accuracies {full:?}"))?;
    check(took < Duration::from_secs(20 * 60), || format!("took {:.0}s", took.as_secs_f64()))?;
    Ok(format!(
        "GC median {:.3} vs plain {:.3}; temporal GC min {:.3}, ECal-S {:.3}; {:.0}s",
        median(gc),
        median(plain),
        full.iter().cloned().fold(1.0, f64::min),
        s_only,
        took.as_secs_f64()
    ))
}

fn short_run() -> Result<(Vec<u8>, String), String> {
    let setup = ToySetup {
        train_per_class: 8,
        val_per_class: 4,
        train: TrainConfig { steps: 6, ..TrainConfig::default() },
        ..ToySetup::default()
    };
    let run = run_toy(Variant::Gc, 11, &setup).map_err(|e| e.to_string())?;
    let bytes = WeightFile::from_model(&run.model).to_bytes().map_err(|e| e.to_string())?;
    Ok((bytes, format!("{:?} {:?}", run.log, run.eval)))
}

fn determinism(first: &selftest::Report) -> Verdict {
    let again = selftest::run(0);
    check(first.render() == again.render(), || "selftest output differs between runs".into())?;
    let (a, b) = (short_run()?, short_run()?);
    check(a.0 == b.0, || "weight files differ".into())?;
    check(a.1 == b.1, || "training logs differ".into())?;
    Ok(format!("selftest and {}-byte weight file identical across runs", a.0.len()))
}

fn main() {
    let report = selftest::run(0);
    let criteria: Vec<Criterion> = vec![
        ("closed forms and percentage table", Box::new(closed_forms)),
        ("network totals", Box::new(model_totals)),
        ("overhead claim", Box::new(overhead_claim)),
        ("analytic vs enumeration", Box::new(enumeration)),
        ("gradient suite", Box::new(gradients)),
        ("oracle equivalence", Box::new(|| oracles(&report))),
        ("structural invariants", Box::new(|| structure(&report))),
        ("toy benchmark", Box::new(toy_benchmark)),
        ("determinism", Box::new(|| determinism(&report))),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = f();
        let secs = start.elapsed().as_secs_f64();
        match &verdict {
            Ok(d) => println!("criterion {} PASS {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                println!("criterion {} FAIL {name}: {d} [{secs:.1}s]", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
