//! Residual video backbones with calibrator sites.

pub mod block;
pub mod layers;
pub mod network;
pub mod spec;

pub use block::{BlockSpec, BlockStyle, Bottleneck, Site, SiteSpec, EXPANSION};
pub use layers::{BnLayer, ConvLayer, ReluLayer};
pub use network::{build_network, Model, SiteGateLogits, HEAD_INIT_STD};
pub use spec::{parse_mask, parse_ratio, CalibratorChoice, Depth, NetworkSpec, StageSpec, StemSpec};
