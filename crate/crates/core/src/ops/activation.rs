use crate::real::Real;
use crate::tensor::Tensor;

#[inline]
pub fn sigmoid_scalar<F: Real>(x: F) -> F {
    // Branch on sign so exp never overflows.
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn sigmoid<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(sigmoid_scalar)
}

/// Gradient through a sigmoid given its forward output.
pub fn sigmoid_backward<F: Real>(out: &Tensor<F>, grad: &Tensor<F>) -> Tensor<F> {
    out.zip_map(grad, |y, g| g * y * (F::one() - y)).expect("sigmoid_backward: shape mismatch")
}

pub fn relu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient through a ReLU given its forward input.
pub fn relu_backward<F: Real>(input: &Tensor<F>, grad: &Tensor<F>) -> Tensor<F> {
    input.zip_map(grad, |x, g| if x > F::zero() { g } else { F::zero() }).expect("relu_backward: shape mismatch")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn sigmoid_reference_points() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        let s = sigmoid_scalar(-50.0f64);
        assert!(s > 0.0 && s < 1e-20 && s.is_finite());
        assert!((sigmoid_scalar(2.0f64) - 0.8807970779778823).abs() < 1e-15);
        assert_eq!(sigmoid_scalar(800.0f64), 1.0);
        assert_eq!(sigmoid_scalar(-800.0f64), 0.0);
    }

    #[test]
    fn relu_masks_negatives() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::full(x.shape(), 1.0);
        assert_eq!(relu_backward(&x, &g).data(), &[0.0, 0.0, 1.0]);
    }
}
