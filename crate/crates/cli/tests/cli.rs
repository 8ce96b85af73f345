use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gc_core::backbone::Model;
use gc_core::io::WeightFile;
use gc_core::toybench::Variant;

fn gcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcnet")).args(args).env("GC_THREADS", "1").output().expect("run gcnet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn summary_reproduces_totals() {
    let cases: [(&[&str], &str, &str); 3] = [
        (&["--arch", "tsn", "--p", "1", "--frames", "8", "--res", "224", "--classes", "174"], "(25.1M)", "(33.3G)"),
        (&["--arch", "tsn", "--p", "0"], "(23.9M)", "(32.9G)"),
        (&["--arch", "gst", "--p", "0", "--frames", "8"], "(21.0M)", "(29.2G)"),
    ];
    for (args, params, macs) in cases {
        let mut full = vec!["summary"];
        full.extend_from_slice(args);
        let o = gcnet(&full);
        assert_eq!(code(&o), 0);
        let out = stdout(&o);
        assert!(out.starts_with("config: style="), "{out}");
        let totals = out.lines().find(|l| l.starts_with("params ")).unwrap();
        assert!(totals.contains(params) && totals.contains(macs), "{totals}");
    }
}

#[test]
fn summary_writes_csv_and_reports_overhead() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let o = gcnet(&["summary", "--p", "1", "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("overhead params +5.3"));
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("layer,params,macs\nstem.conv,"));
    assert!(text.contains("\ntotal,25133358,"));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["summary", "--p", "1/3"][..],
        &["summary", "--mask", "11"],
        &["summary", "--arch", "x3d"],
        &["gradcheck", "--trials", "0"],
        &["summary", "--no-such-flag"],
        &["train-toy", "--gc", "maybe", "--out", "/tmp/unused"],
    ] {
        assert_eq!(code(&gcnet(args)), 2, "{args:?}");
    }
}

#[test]
fn injected_fault_is_named_and_exits_1() {
    let o = gcnet(&["gradcheck", "--trials", "2", "--filter", "ecal", "--inject-fault", "ecal_t"]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("ecal_t ")).unwrap();
    assert!(line.ends_with("FAIL"), "{line}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("ecal_t"));
}

#[test]
fn gradcheck_passes_quickly_filtered() {
    let o = gcnet(&["gradcheck", "--trials", "3", "--filter", "ecal"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("all 4 checks passed"));
}

#[test]
fn selftest_passes_and_prints_percentages() {
    let o = gcnet(&["selftest"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.trim_end().ends_with("PASS 12/12"), "{out}");
    assert!(out.contains("total      1.470588%    1.47%"));
    assert!(out.contains("ecal_s     3.308824%    3.31%"));
}

#[test]
fn train_zero_steps_then_eval_and_gates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = gcnet(&["train-toy", "--steps", "0", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("log.csv")).unwrap(), "step,loss,acc\n");
    let weights = out.join("weights.gcw");

    let o = gcnet(&["eval", "--weights", weights.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let acc: f64 = stdout(&o).lines().find_map(|l| l.strip_prefix("accuracy ")).unwrap().parse().unwrap();
    // chance for 800 clips, within three binomial standard deviations
    assert!((acc - 0.125).abs() < 3.0 * (0.125f64 * 0.875 / 800.0).sqrt() + 1e-12, "{acc}");
}

fn write_zero_calibrator_run(dir: &Path) {
    let spec = Variant::Gc.spec();
    let mut model = gc_core::backbone::build_network::<f32>(&spec, 1).unwrap();
    model.zero_calibrators();
    WeightFile::from_model(&model).save(dir.join("weights.gcw")).unwrap();
    fs::write(dir.join("model.cfg"), spec.to_config()).unwrap();
}

#[test]
fn gates_of_zero_calibrators_are_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_zero_calibrator_run(dir.path());
    let csv = dir.path().join("gates.csv");
    let o = gcnet(&[
        "gates",
        "--weights",
        dir.path().join("weights.gcw").to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("site,calibrator,class,mean_logit"));
    let rows: Vec<_> = lines.collect();
    // 3 sites x 4 calibrators x 8 classes
    assert_eq!(rows.len(), 96);
    for r in rows {
        let v: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(v, 0.0, "{r}");
    }
}

#[test]
fn bad_weight_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write_zero_calibrator_run(dir.path());
    let w = dir.path().join("weights.gcw");
    let mut bytes = fs::read(&w).unwrap();
    bytes[4] = 9;
    let v9 = dir.path().join("v9.gcw");
    fs::write(&v9, &bytes).unwrap();
    let o = gcnet(&["eval", "--weights", v9.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("version 9"));

    let short = dir.path().join("short.gcw");
    fs::write(&short, &fs::read(&w).unwrap()[..100]).unwrap();
    assert_eq!(code(&gcnet(&["eval", "--weights", short.to_str().unwrap()])), 2);
    let missing = dir.path().join("missing.gcw");
    assert_eq!(code(&gcnet(&["eval", "--weights", missing.to_str().unwrap()])), 2);
}

#[test]
fn training_is_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = gcnet(&["train-toy", "--steps", "3", "--seed", "5", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        runs.push((fs::read(out.join("weights.gcw")).unwrap(), fs::read(out.join("log.csv")).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
    let model = Model::<f32>::zeros(&Variant::Gc.spec()).unwrap();
    let file = WeightFile::from_bytes(&runs[0].0).unwrap();
    assert_eq!(file.entries.len(), WeightFile::from_model(&model).entries.len());
}
