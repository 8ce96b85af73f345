//! Parameter-free temporal shift of a fraction of channels.

use num_rational::Ratio;

use crate::error::{config_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Channels shifted in each direction: `floor(C * ratio)`.
pub fn shift_fold(channels: usize, ratio: Ratio<usize>) -> Result<usize> {
    let fold = (Ratio::from_integer(channels) * ratio).to_integer();
    if 2 * fold > channels {
        return Err(config_err!("fold {fold} shifted both ways exceeds {channels} channels"));
    }
    Ok(fold)
}

fn shift<F: Real>(x: &Tensor<F>, fold: usize, forward: bool) -> Tensor<F> {
    let s = x.shape();
    let mut out = x.clone();
    if fold == 0 {
        return out;
    }
    let t_len = s.t();
    for n in 0..s.n() {
        for t in 0..t_len {
            for h in 0..s.h() {
                for w in 0..s.w() {
                    let dst = s.offset(n, t, h, w, 0);
                    // Group A takes the previous frame, group B the next one.
                    let (src_a, src_b) =
                        if forward { (t.checked_sub(1), t + 1) } else { (Some(t + 1), t.wrapping_sub(1)) };
                    for c in 0..fold {
                        out.data_mut()[dst + c] = match src_a {
                            Some(ta) if ta < t_len => x.at(n, ta, h, w, c),
                            _ => F::zero(),
                        };
                    }
                    for c in fold..2 * fold {
                        out.data_mut()[dst + c] = if src_b < t_len { x.at(n, src_b, h, w, c) } else { F::zero() };
                    }
                }
            }
        }
    }
    out
}

/// Channels `[0, fold)` move one frame later, `[fold, 2 fold)` one frame earlier;
/// vacated frames are zero-filled.
pub fn temporal_shift<F: Real>(x: &Tensor<F>, ratio: Ratio<usize>) -> Result<Tensor<F>> {
    let fold = shift_fold(x.shape().c(), ratio)?;
    Ok(shift(x, fold, true))
}

pub fn temporal_shift_backward<F: Real>(grad: &Tensor<F>, ratio: Ratio<usize>) -> Result<Tensor<F>> {
    let fold = shift_fold(grad.shape().c(), ratio)?;
    Ok(shift(grad, fold, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn zero_ratio_is_identity() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 3, 2, 2, 4), |i| i.iter().sum::<usize>() as f64);
        assert_eq!(temporal_shift(&x, Ratio::new(0, 1)).unwrap(), x);
    }

    #[test]
    fn hand_traced_two_frames() {
        let (a, b, c, d) = (1.0, 2.0, 3.0, 4.0);
        let mut x = Tensor::<f64>::from_fn(Shape::new(1, 2, 1, 1, 8), |i| 10.0 + (i[1] * 8 + i[4]) as f64);
        *x.at_mut(0, 0, 0, 0, 0) = a;
        *x.at_mut(0, 1, 0, 0, 0) = b;
        *x.at_mut(0, 0, 0, 0, 1) = c;
        *x.at_mut(0, 1, 0, 0, 1) = d;
        let y = temporal_shift(&x, Ratio::new(1, 8)).unwrap();
        assert_eq!((y.at(0, 0, 0, 0, 0), y.at(0, 1, 0, 0, 0)), (0.0, a));
        assert_eq!((y.at(0, 0, 0, 0, 1), y.at(0, 1, 0, 0, 1)), (d, 0.0));
        for t in 0..2 {
            for ch in 2..8 {
                assert_eq!(y.at(0, t, 0, 0, ch), x.at(0, t, 0, 0, ch));
            }
        }
    }

    #[test]
    fn oversized_fold_rejected() {
        assert!(shift_fold(8, Ratio::new(5, 8)).is_err());
        assert_eq!(shift_fold(8, Ratio::new(1, 2)).unwrap(), 4);
    }
}
