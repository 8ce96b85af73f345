//! Dense rank-5 video tensors laid out as `[N, T, H, W, C]`, channels fastest.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, Result};
use crate::real::Real;

/// Extents of a `[N, T, H, W, C]` tensor.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 5]);

impl Shape {
    pub const fn new(n: usize, t: usize, h: usize, w: usize, c: usize) -> Self {
        Shape([n, t, h, w, c])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn t(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }
    pub fn c(&self) -> usize {
        self.0[4]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Number of `(t, h, w)` sites per sample.
    pub fn volume(&self) -> usize {
        self.t() * self.h() * self.w()
    }

    pub fn with_c(mut self, c: usize) -> Self {
        self.0[4] = c;
        self
    }

    #[inline]
    pub fn offset(&self, n: usize, t: usize, h: usize, w: usize, c: usize) -> usize {
        (((n * self.0[1] + t) * self.0[2] + h) * self.0[3] + w) * self.0[4] + c
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> [usize; 5] {
        let mut s = [1usize; 5];
        for i in (0..4).rev() {
            s[i] = s[i + 1] * self.0[i + 1];
        }
        s
    }

    fn check(&self) -> Result<()> {
        if self.0.contains(&0) {
            return Err(dim_err!("all extents must be >= 1, got {self:?}"));
        }
        Ok(())
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, t, h, w, c] = self.0;
        write!(f, "[{n},{t},{h},{w},{c}]")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Shape,
    data: Vec<F>,
    grad: Option<Vec<F>>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: Shape, value: F) -> Self {
        assert!(shape.numel() > 0, "tensor extents must be >= 1, got {shape:?}");
        Tensor { shape, data: vec![value; shape.numel()], grad: None }
    }

    pub fn from_vec(shape: Shape, data: Vec<F>) -> Result<Self> {
        shape.check()?;
        if data.len() != shape.numel() {
            return Err(dim_err!("{} values do not fill shape {shape}", data.len()));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 5]) -> F) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        let [n, t, h, w, c] = shape.0;
        for i0 in 0..n {
            for i1 in 0..t {
                for i2 in 0..h {
                    for i3 in 0..w {
                        for i4 in 0..c {
                            data.push(f([i0, i1, i2, i3, i4]));
                        }
                    }
                }
            }
        }
        Tensor { shape, data, grad: None }
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                F::from_f64_lossy(z * std)
            })
            .collect();
        Tensor { shape, data, grad: None }
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel()).map(|_| F::from_f64_lossy(rng.gen_range(lo..hi))).collect();
        Tensor { shape, data, grad: None }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn at(&self, n: usize, t: usize, h: usize, w: usize, c: usize) -> F {
        self.data[self.shape.offset(n, t, h, w, c)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, t: usize, h: usize, w: usize, c: usize) -> &mut F {
        let o = self.shape.offset(n, t, h, w, c);
        &mut self.data[o]
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &Tensor<F>) -> Result<()> {
        if g.shape != self.shape {
            return Err(dim_err!("gradient shape {} != tensor shape {}", g.shape, self.shape));
        }
        let buf = self.grad.get_or_insert_with(|| vec![F::zero(); g.numel()]);
        for (b, &v) in buf.iter_mut().zip(&g.data) {
            *b += v;
        }
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Tensor<F>> {
        let shape = self.shape;
        self.grad.take().map(|data| Tensor { shape, data, grad: None })
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.numel() {
            return Err(dim_err!("cannot reshape {} into {}", self.shape, shape));
        }
        shape.check()?;
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect(), grad: None }
    }

    pub fn zip_map(&self, other: &Tensor<F>, f: impl Fn(F, F) -> F) -> Result<Self> {
        if self.shape != other.shape {
            return Err(dim_err!("shape mismatch {} vs {}", self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape, data, grad: None })
    }

    pub fn add(&self, other: &Tensor<F>) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Tensor<F>) -> Result<()> {
        if self.shape != other.shape {
            return Err(dim_err!("shape mismatch {} vs {}", self.shape, other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: F) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<F>) -> F {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data.iter().zip(&other.data).fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Converts element type, e.g. `f64` verification tensors to `f32`.
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| G::from_f64_lossy(v.as_f64())).collect(),
            grad: None,
        }
    }

    /// Copies channels `[start, start + len)` into a new tensor.
    pub fn channel_slice(&self, start: usize, len: usize) -> Result<Self> {
        let c = self.shape.c();
        if len == 0 || start + len > c {
            return Err(dim_err!("channel slice {start}..{} out of 0..{c}", start + len));
        }
        let mut data = Vec::with_capacity(self.numel() / c * len);
        for row in self.data.chunks_exact(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Ok(Tensor { shape: self.shape.with_c(len), data, grad: None })
    }

    /// Overwrites channels `[start, start + src.c)` with `src`.
    pub fn write_channels(&mut self, start: usize, src: &Tensor<F>) -> Result<()> {
        let c = self.shape.c();
        let len = src.shape.c();
        if src.shape.with_c(c) != self.shape || start + len > c {
            return Err(dim_err!("cannot write {} at channel {start} of {}", src.shape, self.shape));
        }
        for (dst, s) in self.data.chunks_exact_mut(c).zip(src.data.chunks_exact(len)) {
            dst[start..start + len].copy_from_slice(s);
        }
        Ok(())
    }
}

impl<F: fmt::Debug> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<_> = self.data.iter().take(6).collect();
        write!(f, "Tensor{}{:?}", self.shape, head)?;
        if self.data.len() > 6 {
            write!(f, "..")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_extent_and_bad_length() {
        assert!(Tensor::<f64>::from_vec(Shape::new(1, 0, 1, 1, 1), vec![]).is_err());
        assert!(Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 1, 2), vec![1.0]).is_err());
    }

    #[test]
    fn offset_is_channels_fastest() {
        let s = Shape::new(2, 3, 4, 5, 6);
        assert_eq!(s.offset(0, 0, 0, 0, 1), 1);
        assert_eq!(s.offset(0, 0, 0, 1, 0), 6);
        assert_eq!(s.offset(1, 0, 0, 0, 0), 3 * 4 * 5 * 6);
        assert_eq!(s.strides(), [360, 120, 30, 6, 1]);
    }

    #[test]
    fn grad_buffer_matches_shape() {
        let mut t = Tensor::<f64>::zeros(Shape::new(1, 2, 1, 1, 2));
        let g = Tensor::full(t.shape(), 1.5);
        t.accumulate_grad(&g).unwrap();
        t.accumulate_grad(&g).unwrap();
        assert_eq!(t.grad().unwrap(), &[3.0; 4]);
        assert!(t.accumulate_grad(&Tensor::zeros(Shape::new(1, 1, 1, 1, 1))).is_err());
    }

    #[test]
    fn channel_slice_and_write_back() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 2, 1, 4), |[_, t, h, _, c]| (t * 100 + h * 10 + c) as f64);
        let mid = x.channel_slice(1, 2).unwrap();
        assert_eq!(mid.at(0, 1, 1, 0, 0), 111.0);
        let mut y = Tensor::zeros(x.shape());
        y.write_channels(1, &mid).unwrap();
        assert_eq!(y.at(0, 1, 1, 0, 2), 112.0);
        assert_eq!(y.at(0, 1, 1, 0, 3), 0.0);
    }
}
