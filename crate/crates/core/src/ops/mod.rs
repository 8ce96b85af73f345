//! Differentiable kernels. Every forward function has a matching `*_backward`.

pub mod activation;
pub mod channels;
pub mod conv;
pub mod gate;
pub mod linear;
pub mod maxpool;
pub mod norm;
pub mod pool;
pub mod shift;
pub mod upsample;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar};
pub use channels::{concat_channels, split_channels};
pub use conv::{conv3d, conv3d_backward, ConvGrads, ConvParams};
pub use gate::{gate_apply, gate_apply_backward};
pub use linear::{fully_connected, fully_connected_backward, LinearGrads, LinearParams};
pub use maxpool::{max_pool, max_pool_backward, MaxPoolSpec};
pub use norm::{batch_norm, batch_norm_backward, BatchNormCache, BatchNormGrads, BatchNormParams, Mode};
pub use pool::{avg_pool, avg_pool_backward, pool_global, pool_over_space, pool_over_time, PoolAxes};
pub use shift::{shift_fold, temporal_shift, temporal_shift_backward};
pub use upsample::{upsample_nearest, upsample_nearest_backward};
