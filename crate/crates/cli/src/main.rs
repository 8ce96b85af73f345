use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gc_core::accounting::{model_count, render_percentage_table};
use gc_core::backbone::{Model, NetworkSpec};
use gc_core::gradcheck::{self, GradcheckConfig};
use gc_core::io::WeightFile;
use gc_core::toybench::{
    build_toy_model, evaluate, gate_stats, gate_stats_csv, toy_datasets, train, ToySetup, TrainConfig, Variant,
    CLASS_NAMES,
};
use thiserror::Error;

/// Weights file written by `train-toy`.
const WEIGHTS_FILE: &str = "weights.gcw";
/// Network config stored next to the weights.
const CONFIG_FILE: &str = "model.cfg";
const LOG_FILE: &str = "log.csv";

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] gc_core::Error),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            _ => 2,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Parser)]
#[command(name = "gcnet", version, about = "Group-contextualized video backbones: counts, checks and a toy benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Per-layer parameter and MAC counts with overhead against the uncalibrated backbone.
    Summary(SummaryArgs),
    /// Finite-difference gradient checks of every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Oracle, accounting and structural invariant suite.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the toy micro-net and write weights, config and a loss log.
    TrainToy(TrainArgs),
    /// Accuracy of saved weights on the toy validation split.
    Eval(EvalArgs),
    /// Mean pre-sigmoid gate logits per site, calibrator and class, as CSV.
    Gates(GatesArgs),
}

#[derive(Debug, Args)]
struct SummaryArgs {
    #[arg(long, default_value = "tsn")]
    arch: String,
    /// Partition ratio (`0` = no calibrators, `1/2`, `0.25`, ...).
    #[arg(long, default_value = "1")]
    p: String,
    #[arg(long, default_value = "standard")]
    placement: String,
    /// Stage insertion mask, Res1..Res4.
    #[arg(long, default_value = "1111")]
    mask: String,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 224)]
    res: usize,
    #[arg(long, default_value_t = 174)]
    classes: usize,
    /// Subset of GSTL to keep active.
    #[arg(long)]
    calibrators: Option<String>,
    /// A comparison calibrator (se3d, ge3d_g, ge3d_c, s3d_g) instead of GC.
    #[arg(long, conflicts_with_all = ["calibrators"])]
    compare: Option<String>,
    #[arg(long, default_value = "50")]
    depth: String,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Only run checks whose name contains this.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = TrainConfig::default().steps)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// on, off, or ecal-s (GC with only the spatial calibrator).
    #[arg(long, default_value = "on")]
    gc: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Network config; defaults to model.cfg next to the weights.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the validation split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GatesArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = configure_threads().and_then(|_| match cli.cmd {
        Cmd::Summary(a) => summary(a),
        Cmd::Gradcheck(a) => gradcheck_cmd(a),
        Cmd::Selftest { seed } => selftest(seed),
        Cmd::TrainToy(a) => train_toy(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Gates(a) => gates(a),
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Honors `GC_THREADS` by sizing the global worker pool.
fn configure_threads() -> CliResult {
    let Ok(v) = std::env::var("GC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("GC_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

fn summary(a: SummaryArgs) -> CliResult {
    let mut cfg = format!(
        "style={} depth={} p={} placement={} mask={} frames={} resolution={} classes={}",
        a.arch, a.depth, a.p, a.placement, a.mask, a.frames, a.res, a.classes
    );
    if let Some(c) = &a.calibrators {
        cfg.push_str(&format!(" calibrators={c}"));
    }
    if let Some(c) = &a.compare {
        cfg = cfg.replace(&format!("p={}", a.p), "p=0");
        cfg.push_str(&format!(" compare={c}"));
    }
    let spec = NetworkSpec::parse_config(&cfg)?;
    println!("config: {spec}");
    let report = model_count(&spec)?;
    print!("{}", report.to_text());
    if let Some(path) = &a.csv {
        fs::write(path, report.to_csv()).map_err(io_err(path))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> CliResult {
    let cfg = GradcheckConfig { seed: a.seed, trials: a.trials, inject_fault: a.inject_fault, ..Default::default() };
    println!(
        "config: seed={} trials={} step={:e} rel_tol={:e} abs_floor={:e}",
        cfg.seed, cfg.trials, cfg.step, cfg.rel_tol, cfg.abs_floor
    );
    let results = gradcheck::run(&cfg, a.filter.as_deref())?;
    println!("{:<18} {:>7} {:>8} {:>8} {:>12}  result", "check", "trials", "coords", "skipped", "max rel err");
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{:<18} {:>7} {:>8} {:>8} {:>12.3e}  {}",
            r.name,
            r.trials,
            r.coords,
            r.skipped,
            r.max_rel_error,
            if r.passed { "PASS" } else { "FAIL" }
        );
        if !r.passed {
            println!("  worst: {}", r.worst);
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        println!("all {} checks passed", results.len());
        Ok(())
    } else {
        Err(CliError::Verification(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn selftest(seed: u64) -> CliResult {
    println!("config: seed={seed}");
    for p in ["1/2", "1"] {
        print!("{}", render_percentage_table(gc_core::backbone::parse_ratio(p)?)?);
    }
    let report = gc_core::selftest::run(seed);
    print!("{}", report.render());
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::Verification(report.summary_line()))
    }
}

fn train_toy(a: TrainArgs) -> CliResult {
    let variant: Variant = a.gc.parse()?;
    let setup = ToySetup {
        train: TrainConfig {
            steps: a.steps,
            seed: a.seed,
            batch_size: a.batch_size,
            lr: a.lr,
            ..TrainConfig::default()
        },
        ..ToySetup::default()
    };
    setup.train.validate()?;
    let spec = variant.spec();
    println!("config: {spec}");
    println!(
        "train: variant={variant} steps={} batch={} lr={} momentum={} weight_decay={} seed={} noise={} train/val per class={}/{}",
        setup.train.steps,
        setup.train.batch_size,
        setup.train.lr,
        setup.train.momentum,
        setup.train.weight_decay,
        setup.train.seed,
        setup.noise,
        setup.train_per_class,
        setup.val_per_class
    );
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let (tr, va) = toy_datasets(&setup, a.seed)?;
    let mut model = build_toy_model(variant, a.seed)?;
    let log = train(&mut model, &tr, None, &setup.train)?;
    let weights = a.out.join(WEIGHTS_FILE);
    WeightFile::from_model(&model).save(&weights)?;
    let cfg = a.out.join(CONFIG_FILE);
    fs::write(&cfg, format!("{spec}\n")).map_err(io_err(&cfg))?;
    let log_path = a.out.join(LOG_FILE);
    fs::write(&log_path, log.to_csv()).map_err(io_err(&log_path))?;
    if let Some(last) = log.steps.last() {
        println!("final step loss {:.6}", last.loss);
    }
    if a.steps > 0 {
        print_eval(&evaluate(&mut model, &va)?);
    }
    println!("wrote {}, {}, {}", weights.display(), cfg.display(), log_path.display());
    Ok(())
}

fn load_model(weights: &Path, config: Option<&Path>) -> CliResult<Model<f32>> {
    let file = WeightFile::load(weights).map_err(|e| match e {
        gc_core::Error::Io(source) => CliError::Io { path: weights.to_path_buf(), source },
        other => other.into(),
    })?;
    let cfg_path = match config {
        Some(p) => p.to_path_buf(),
        None => weights.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE),
    };
    let text = fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path))?;
    let spec = NetworkSpec::parse_config(&text)?;
    println!("config: {spec}");
    let mut model = Model::zeros(&spec)?;
    file.apply(&mut model)?;
    Ok(model)
}

fn print_eval(ev: &gc_core::toybench::Evaluation) {
    println!("accuracy {:.4}", ev.accuracy);
    for (c, (acc, n)) in ev.per_class.iter().zip(&ev.counts).enumerate() {
        println!("  class {c} {:<16} {:.4} (n={n})", CLASS_NAMES[c], acc);
    }
}

fn eval(a: EvalArgs) -> CliResult {
    let mut model = load_model(&a.weights, a.config.as_deref())?;
    let setup = ToySetup::default();
    println!("eval: seed={} val per class={} noise={}", a.seed, setup.val_per_class, setup.noise);
    let (_, va) = toy_datasets(&ToySetup { train_per_class: 0, ..setup }, a.seed)?;
    print_eval(&evaluate(&mut model, &va)?);
    Ok(())
}

fn gates(a: GatesArgs) -> CliResult {
    let mut model = load_model(&a.weights, a.config.as_deref())?;
    let setup = ToySetup { train_per_class: 0, ..ToySetup::default() };
    println!("gates: seed={} val per class={} noise={}", a.seed, setup.val_per_class, setup.noise);
    let (_, va) = toy_datasets(&setup, a.seed)?;
    let stats = gate_stats(&mut model, &va)?;
    fs::write(&a.out, gate_stats_csv(&stats)).map_err(io_err(&a.out))?;
    println!("wrote {} rows to {}", stats.len(), a.out.display());
    Ok(())
}
