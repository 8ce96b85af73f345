//! Seeded inputs shared by the benchmarks.

use gc_core::ops::ConvParams;
use gc_core::{Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard-normal activation `[n, t, s, s, c]`.
pub fn activation(n: usize, t: usize, s: usize, c: usize, seed: u64) -> Tensor<f32> {
    Tensor::randn(Shape::new(n, t, s, s, c), 1.0, &mut rng(seed))
}

/// He-initialized `1 x 3 x 3` same-padded conv from `c` to `c` channels.
pub fn spatial_conv(c: usize, seed: u64) -> ConvParams<f32> {
    let mut p = ConvParams::zeros(c, c, [1, 3, 3], false).with_padding([0, 1, 1]);
    p.init_he(&mut rng(seed));
    p
}
