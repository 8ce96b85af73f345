//! Channel-axis split and concatenation.

use crate::error::{dim_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub fn split_channels<F: Real>(x: &Tensor<F>, sizes: &[usize]) -> Result<Vec<Tensor<F>>> {
    let total: usize = sizes.iter().sum();
    if total != x.shape().c() || sizes.contains(&0) {
        return Err(dim_err!("split sizes {sizes:?} do not partition {} channels", x.shape().c()));
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&len| {
            let part = x.channel_slice(start, len);
            start += len;
            part
        })
        .collect()
}

pub fn concat_channels<F: Real>(parts: &[Tensor<F>]) -> Result<Tensor<F>> {
    let first = parts.first().ok_or_else(|| dim_err!("concat of zero tensors"))?.shape();
    let c: usize = parts.iter().map(|p| p.shape().c()).sum();
    for p in parts {
        if p.shape().with_c(c) != first.with_c(c) {
            return Err(dim_err!("concat parts disagree on N,T,H,W: {} vs {}", p.shape(), first));
        }
    }
    let rows = first.numel() / first.c();
    let mut data = Vec::with_capacity(rows * c);
    for r in 0..rows {
        for p in parts {
            let pc = p.shape().c();
            data.extend_from_slice(&p.data()[r * pc..(r + 1) * pc]);
        }
    }
    Tensor::from_vec(first.with_c(c), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn sample() -> Tensor<f64> {
        Tensor::from_fn(Shape::new(2, 2, 2, 1, 8), |i| (i[0] * 1000 + i[1] * 100 + i[2] * 10 + i[4]) as f64)
    }

    #[test]
    fn four_way_roundtrip() {
        let x = sample();
        let parts = split_channels(&x, &[2, 2, 2, 2]).unwrap();
        assert_eq!(parts.len(), 4);
        assert_eq!(concat_channels(&parts).unwrap(), x);
    }

    #[test]
    fn single_group_split() {
        let x = sample();
        assert_eq!(split_channels(&x, &[8]).unwrap(), vec![x]);
    }

    #[test]
    fn mismatched_sizes_rejected() {
        assert!(split_channels(&sample(), &[3, 4]).is_err());
        let a = Tensor::<f64>::zeros(Shape::new(1, 2, 1, 1, 1));
        let b = Tensor::<f64>::zeros(Shape::new(1, 3, 1, 1, 1));
        assert!(concat_channels(&[a, b]).is_err());
    }
}
