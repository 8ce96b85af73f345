//! Element-wise calibrators and the group-contextualization module.

pub mod calibrator;
pub mod gc;
mod kind;

pub use calibrator::{calibrate, calibrate_backward, CalibratorCache, CalibratorParams, CalibratorSpec};
pub use gc::{chunk_assignment, ChunkGeometry, GcConfig, GcModule, Placement};
pub use kind::CalibratorKind;
