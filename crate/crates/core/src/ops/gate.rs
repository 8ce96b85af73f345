//! Broadcast gating: `out = expand(g) * x`.

use crate::error::{dim_err, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

fn check(x: Shape, g: Shape) -> Result<()> {
    for a in 0..5 {
        if g.0[a] != 1 && g.0[a] != x.0[a] {
            return Err(dim_err!("gate {g} does not broadcast to {x}"));
        }
    }
    Ok(())
}

/// Offset into `g` for every element of `x`, in `x` order.
fn broadcast_index(x: Shape, g: Shape) -> impl Iterator<Item = usize> {
    let gs = g.strides();
    let eff: [usize; 5] = std::array::from_fn(|a| if g.0[a] == 1 { 0 } else { gs[a] });
    let [n, t, h, w, c] = x.0;
    (0..n).flat_map(move |i0| {
        (0..t).flat_map(move |i1| {
            (0..h).flat_map(move |i2| {
                (0..w).flat_map(move |i3| {
                    let base = i0 * eff[0] + i1 * eff[1] + i2 * eff[2] + i3 * eff[3];
                    (0..c).map(move |i4| base + i4 * eff[4])
                })
            })
        })
    })
}

pub fn gate_apply<F: Real>(x: &Tensor<F>, g: &Tensor<F>) -> Result<Tensor<F>> {
    check(x.shape(), g.shape())?;
    let gd = g.data();
    let data = x.data().iter().zip(broadcast_index(x.shape(), g.shape())).map(|(&v, i)| v * gd[i]).collect();
    Tensor::from_vec(x.shape(), data)
}

/// Returns `(d/dx, d/dg)`; the gate gradient is summed over broadcast axes.
pub fn gate_apply_backward<F: Real>(x: &Tensor<F>, g: &Tensor<F>, grad: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    check(x.shape(), g.shape())?;
    if grad.shape() != x.shape() {
        return Err(dim_err!("gate backward: gradient {} vs input {}", grad.shape(), x.shape()));
    }
    let gd = g.data();
    let mut dx = Tensor::zeros(x.shape());
    let mut dg = Tensor::zeros(g.shape());
    {
        let dgd = dg.data_mut();
        for (((d, &gv), &xv), i) in
            dx.data_mut().iter_mut().zip(grad.data()).zip(x.data()).zip(broadcast_index(x.shape(), g.shape()))
        {
            *d = gv * gd[i];
            dgd[i] += gv * xv;
        }
    }
    Ok((dx, dg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gate_is_bit_identity() {
        let x = Tensor::<f64>::from_fn(Shape::new(2, 3, 2, 2, 4), |i| (i[1] as f64 - 1.3) * (i[4] as f64 + 0.1));
        let g = Tensor::full(Shape::new(2, 1, 1, 1, 4), 1.0);
        assert_eq!(gate_apply(&x, &g).unwrap(), x);
    }

    #[test]
    fn half_gate_halves_exactly() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 3, 1, 2), |i| i.iter().sum::<usize>() as f64 * 1.7 - 2.0);
        let g = Tensor::full(Shape::new(1, 2, 1, 1, 2), 0.5);
        let y = gate_apply(&x, &g).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, b / 2.0);
        }
    }

    #[test]
    fn non_broadcastable_gate_rejected() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 4, 2, 2, 3));
        let g = Tensor::zeros(Shape::new(1, 2, 1, 1, 3));
        assert!(matches!(gate_apply(&x, &g), Err(crate::Error::Dimension(_))));
    }
}
