//! Nearest-neighbour resampling of a coarse `(T, H, W)` map to a finer grid.

use crate::error::{dim_err, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

#[inline]
fn src(i: usize, coarse: usize, fine: usize) -> usize {
    i * coarse / fine
}

pub fn upsample_nearest<F: Real>(x: &Tensor<F>, target: Shape) -> Result<Tensor<F>> {
    let s = x.shape();
    if target.n() != s.n() || target.c() != s.c() || target.t() < s.t() || target.h() < s.h() || target.w() < s.w() {
        return Err(dim_err!("cannot upsample {s} to {target}"));
    }
    Ok(Tensor::from_fn(target, |[n, t, h, w, c]| {
        x.at(n, src(t, s.t(), target.t()), src(h, s.h(), target.h()), src(w, s.w(), target.w()), c)
    }))
}

/// Sums fine-grid gradients into the coarse cell each one was copied from.
pub fn upsample_nearest_backward<F: Real>(grad: &Tensor<F>, coarse: Shape) -> Tensor<F> {
    let f = grad.shape();
    let mut dx = Tensor::zeros(coarse);
    for n in 0..f.n() {
        for t in 0..f.t() {
            for h in 0..f.h() {
                for w in 0..f.w() {
                    for c in 0..f.c() {
                        *dx.at_mut(
                            n,
                            src(t, coarse.t(), f.t()),
                            src(h, coarse.h(), f.h()),
                            src(w, coarse.w(), f.w()),
                            c,
                        ) += grad.at(n, t, h, w, c);
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubles_each_cell() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2, 1), vec![1.0, 2.0]).unwrap();
        let y = upsample_nearest(&x, Shape::new(1, 2, 2, 4, 1)).unwrap();
        assert_eq!(&y.data()[..4], &[1.0, 1.0, 2.0, 2.0]);
        let back = upsample_nearest_backward(&Tensor::full(y.shape(), 1.0), x.shape());
        assert_eq!(back.data(), &[8.0, 8.0]);
    }
}
