//! Max pooling over `(T, H, W)` windows with implicit `-inf` padding.

use crate::error::{config_err, dim_err, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPoolSpec {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl MaxPoolSpec {
    /// The `1 x 3 x 3` stride-2 pool of a residual-network stem.
    pub const STEM: MaxPoolSpec = MaxPoolSpec { kernel: [1, 3, 3], stride: [1, 2, 2], padding: [0, 1, 1] };

    pub fn output_shape(&self, s: Shape) -> Result<Shape> {
        let ext = [s.t(), s.h(), s.w()];
        let mut out = [0; 3];
        for a in 0..3 {
            if self.stride[a] == 0 || self.kernel[a] == 0 || self.padding[a] >= self.kernel[a] {
                return Err(config_err!("invalid max-pool geometry {self:?}"));
            }
            let padded = ext[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return Err(dim_err!("max-pool window larger than input {s}"));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(Shape::new(s.n(), out[0], out[1], out[2], s.c()))
    }
}

/// Returns the pooled tensor and, per output element, the flat input index it came from.
pub fn max_pool<F: Real>(x: &Tensor<F>, spec: &MaxPoolSpec) -> Result<(Tensor<F>, Vec<usize>)> {
    let s = x.shape();
    let os = spec.output_shape(s)?;
    let mut out = Tensor::zeros(os);
    let mut argmax = vec![0usize; os.numel()];
    let ext = [s.t() as isize, s.h() as isize, s.w() as isize];
    let mut o = 0;
    for n in 0..os.n() {
        for to in 0..os.t() {
            for ho in 0..os.h() {
                for wo in 0..os.w() {
                    for c in 0..s.c() {
                        let mut best = F::neg_infinity();
                        let mut best_i = usize::MAX;
                        for kt in 0..spec.kernel[0] {
                            let t = (to * spec.stride[0] + kt) as isize - spec.padding[0] as isize;
                            if t < 0 || t >= ext[0] {
                                continue;
                            }
                            for kh in 0..spec.kernel[1] {
                                let h = (ho * spec.stride[1] + kh) as isize - spec.padding[1] as isize;
                                if h < 0 || h >= ext[1] {
                                    continue;
                                }
                                for kw in 0..spec.kernel[2] {
                                    let w = (wo * spec.stride[2] + kw) as isize - spec.padding[2] as isize;
                                    if w < 0 || w >= ext[2] {
                                        continue;
                                    }
                                    let i = s.offset(n, t as usize, h as usize, w as usize, c);
                                    if x.data()[i] > best {
                                        best = x.data()[i];
                                        best_i = i;
                                    }
                                }
                            }
                        }
                        out.data_mut()[o] = best;
                        argmax[o] = best_i;
                        o += 1;
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn max_pool_backward<F: Real>(grad: &Tensor<F>, input: Shape, argmax: &[usize]) -> Tensor<F> {
    let mut dx = Tensor::zeros(input);
    for (&i, &g) in argmax.iter().zip(grad.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_pool_halves_and_picks_max() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 4, 4, 1), |[_, _, h, w, _]| (h * 4 + w) as f64);
        let (y, arg) = max_pool(&x, &MaxPoolSpec::STEM).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2, 1));
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
        let back = max_pool_backward(&Tensor::full(y.shape(), 1.0), x.shape(), &arg);
        assert_eq!(back.sum(), 4.0);
        assert_eq!(back.at(0, 0, 1, 1, 0), 1.0);
    }
}
