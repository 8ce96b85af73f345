//! Axial average pooling over time, space, or both.

use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Which of the `(T, H, W)` axes an average pool collapses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolAxes {
    /// `T, H, W` -> `1, 1, 1`.
    Global,
    /// `T` -> `1`.
    Time,
    /// `H, W` -> `1, 1`.
    Space,
}

impl PoolAxes {
    pub fn output_shape(self, s: Shape) -> Shape {
        match self {
            PoolAxes::Global => Shape::new(s.n(), 1, 1, 1, s.c()),
            PoolAxes::Time => Shape::new(s.n(), 1, s.h(), s.w(), s.c()),
            PoolAxes::Space => Shape::new(s.n(), s.t(), 1, 1, s.c()),
        }
    }

    fn count(self, s: Shape) -> usize {
        match self {
            PoolAxes::Global => s.volume(),
            PoolAxes::Time => s.t(),
            PoolAxes::Space => s.h() * s.w(),
        }
    }

    /// Output row (everything but the channel) that input site `(n, t, h, w)` averages into.
    #[inline]
    fn target(self, out: Shape, n: usize, t: usize, h: usize, w: usize) -> usize {
        match self {
            PoolAxes::Global => out.offset(n, 0, 0, 0, 0),
            PoolAxes::Time => out.offset(n, 0, h, w, 0),
            PoolAxes::Space => out.offset(n, t, 0, 0, 0),
        }
    }
}

pub fn avg_pool<F: Real>(x: &Tensor<F>, axes: PoolAxes) -> Tensor<F> {
    let s = x.shape();
    let os = axes.output_shape(s);
    let c = s.c();
    let mut out = Tensor::zeros(os);
    let src = x.data();
    let dst = out.data_mut();
    let mut row = 0;
    for n in 0..s.n() {
        for t in 0..s.t() {
            for h in 0..s.h() {
                for w in 0..s.w() {
                    let o = axes.target(os, n, t, h, w);
                    for (d, &v) in dst[o..o + c].iter_mut().zip(&src[row..row + c]) {
                        *d += v;
                    }
                    row += c;
                }
            }
        }
    }
    let inv = F::one() / F::from_usize(axes.count(s)).unwrap();
    dst.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Spreads the pooled gradient uniformly back over the collapsed axes.
pub fn avg_pool_backward<F: Real>(grad: &Tensor<F>, input: Shape, axes: PoolAxes) -> Tensor<F> {
    debug_assert_eq!(grad.shape(), axes.output_shape(input));
    let os = grad.shape();
    let c = input.c();
    let inv = F::one() / F::from_usize(axes.count(input)).unwrap();
    let mut out = Tensor::zeros(input);
    let g = grad.data();
    let dst = out.data_mut();
    let mut row = 0;
    for n in 0..input.n() {
        for t in 0..input.t() {
            for h in 0..input.h() {
                for w in 0..input.w() {
                    let o = axes.target(os, n, t, h, w);
                    for (d, &v) in dst[row..row + c].iter_mut().zip(&g[o..o + c]) {
                        *d = v * inv;
                    }
                    row += c;
                }
            }
        }
    }
    out
}

/// Mean over `(T, H, W)`: `[N,T,H,W,C] -> [N,1,1,1,C]`.
pub fn pool_global<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    avg_pool(x, PoolAxes::Global)
}

/// Mean over `T`: `[N,T,H,W,C] -> [N,1,H,W,C]`.
pub fn pool_over_time<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    avg_pool(x, PoolAxes::Time)
}

/// Mean over `(H, W)`: `[N,T,H,W,C] -> [N,T,1,1,C]`.
pub fn pool_over_space<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    avg_pool(x, PoolAxes::Space)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_pools_to_constant() {
        let x = Tensor::<f64>::full(Shape::new(1, 2, 2, 2, 1), 3.0);
        assert_eq!(pool_global(&x).data(), &[3.0]);
    }

    #[test]
    fn global_mean_of_ramp() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 2, 2, 2, 1), (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(pool_global(&x).data(), &[3.5]);
    }

    #[test]
    fn single_frame_time_pool_is_identity() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 1, 3, 2, 2), |i| i.iter().sum::<usize>() as f64 * 0.3);
        assert_eq!(pool_over_time(&x), x);
    }

    #[test]
    fn two_frames_average() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 2, 1, 1, 1), vec![0.0, 2.0]).unwrap();
        assert_eq!(pool_over_time(&x).data(), &[1.0]);
    }

    #[test]
    fn unit_space_pool_is_identity_and_grid_mean() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 3, 1, 1, 2), |[_, t, _, _, c]| (t * 2 + c) as f64);
        assert_eq!(pool_over_space(&x), x);
        let g = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(pool_over_space(&g).data(), &[2.5]);
    }

    #[test]
    fn backward_is_uniform() {
        let s = Shape::new(1, 2, 2, 2, 1);
        let g = Tensor::<f64>::full(Shape::new(1, 1, 1, 1, 1), 8.0);
        let back = avg_pool_backward(&g, s, PoolAxes::Global);
        assert!(back.data().iter().all(|&v| v == 1.0));
    }
}
