//! Desk-scale benchmark: synthetic axial-signature clips, a trainer,
//! evaluation and gate statistics.

pub mod data;
pub mod experiment;
pub mod train;

pub use data::{
    batch, clip_seed, generate_dataset, render, rule_classify, ClipGeometry, ClipParams, DatasetConfig, Family,
    SyntheticClip, CLASS_NAMES, NUM_CLASSES,
};
pub use experiment::{build_toy_model, dataset_seeds, run_toy, toy_datasets, ToyRun, ToySetup, Variant};
pub use train::{
    argmax, evaluate, gate_stats, gate_stats_csv, softmax_cross_entropy, train, Evaluation, GateStat, Sgd, StepRecord,
    TrainConfig, TrainLog,
};
