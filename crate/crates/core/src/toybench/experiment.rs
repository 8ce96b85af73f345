//! The standard toy runs: micro-net variants trained on the axial dataset.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;

use crate::backbone::{build_network, BlockStyle, CalibratorChoice, Model, NetworkSpec};
use crate::calib::{CalibratorKind, GcConfig, Placement};
use crate::error::{config_err, Error, Result};
use crate::toybench::data::{generate_dataset, DatasetConfig, SyntheticClip};
use crate::toybench::train::{evaluate, train, Evaluation, TrainConfig, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// All four ECals at every block, `p = 1`.
    Gc,
    /// Plain micro-net.
    NoGc,
    /// GC with only the ECal-S group active.
    SpatialOnly,
}

impl Variant {
    pub fn spec(self) -> NetworkSpec {
        let base = NetworkSpec::micro(BlockStyle::Tsn);
        let one = Ratio::from_integer(1);
        match self {
            Variant::Gc => base.with_gc(one, Placement::Standard).expect("p = 1 is legal"),
            Variant::NoGc => base,
            Variant::SpatialOnly => base.with_calibrator(CalibratorChoice::Gc(
                GcConfig::single(CalibratorKind::EcalS, one).expect("p = 1 is legal"),
            )),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Gc => "gc",
            Variant::NoGc => "none",
            Variant::SpatialOnly => "ecal-s",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gc" | "on" => Ok(Variant::Gc),
            "none" | "off" => Ok(Variant::NoGc),
            "ecal-s" | "s" => Ok(Variant::SpatialOnly),
            other => Err(config_err!("unknown toy variant '{other}' (expected gc|none|ecal-s)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySetup {
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub noise: f64,
    pub train: TrainConfig,
}

impl Default for ToySetup {
    fn default() -> Self {
        ToySetup { train_per_class: 400, val_per_class: 100, noise: 0.05, train: TrainConfig::default() }
    }
}

/// Dataset seeds for run seed `seed`: `(train, validation)`.
pub fn dataset_seeds(seed: u64) -> (u64, u64) {
    (1000 + seed, 2000 + seed)
}

pub fn toy_datasets(setup: &ToySetup, seed: u64) -> Result<(Vec<SyntheticClip>, Vec<SyntheticClip>)> {
    let (ts, vs) = dataset_seeds(seed);
    Ok((
        generate_dataset(&DatasetConfig::new(setup.train_per_class, setup.noise, ts))?,
        generate_dataset(&DatasetConfig::new(setup.val_per_class, setup.noise, vs))?,
    ))
}

pub struct ToyRun {
    pub variant: Variant,
    pub seed: u64,
    pub model: Model<f32>,
    pub log: TrainLog,
    pub eval: Evaluation,
}

pub fn build_toy_model(variant: Variant, seed: u64) -> Result<Model<f32>> {
    build_network(&variant.spec(), seed)
}

/// Builds the variant with `seed`, trains it and scores it on the validation split.
pub fn run_toy(variant: Variant, seed: u64, setup: &ToySetup) -> Result<ToyRun> {
    let (tr, va) = toy_datasets(setup, seed)?;
    let mut model = build_toy_model(variant, seed)?;
    let cfg = TrainConfig { seed, ..setup.train };
    let log = train(&mut model, &tr, Some(&va), &cfg)?;
    let eval = evaluate(&mut model, &va)?;
    Ok(ToyRun { variant, seed, model, log, eval })
}
