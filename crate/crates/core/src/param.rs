//! Learnable parameters and non-learnable state buffers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer and counted by the accounting engine.
    Learned,
    /// Persistent state such as batch-norm running statistics.
    Buffer,
}

/// A flat array with a logical shape, its gradient accumulator and role.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
    pub kind: ParamKind,
}

impl<F: Real> Param<F> {
    pub fn filled(shape: &[usize], v: F) -> Self {
        let n = shape.iter().product();
        Param { shape: shape.to_vec(), value: vec![v; n], grad: vec![F::zero(); n], kind: ParamKind::Learned }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, F::zero())
    }

    pub fn buffer(shape: &[usize], v: F) -> Self {
        Param { kind: ParamKind::Buffer, ..Self::filled(shape, v) }
    }

    pub fn from_values(shape: &[usize], value: Vec<F>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "param shape/value mismatch");
        let n = value.len();
        Param { shape: shape.to_vec(), value, grad: vec![F::zero(); n], kind: ParamKind::Learned }
    }

    /// Zero-mean normal entries with the given standard deviation.
    pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let value = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                F::from_f64_lossy(z * std)
            })
            .collect();
        Self::from_values(shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn is_learned(&self) -> bool {
        self.kind == ParamKind::Learned
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = F::zero());
    }

    pub fn accumulate(&mut self, g: &[F]) {
        debug_assert_eq!(g.len(), self.grad.len());
        for (a, &b) in self.grad.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn fill(&mut self, v: F) {
        self.value.iter_mut().for_each(|x| *x = v);
    }
}

/// Visitor over named parameters; implemented by every layer that owns any.
pub trait Parameters<F: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    /// Number of learned scalars (buffers excluded).
    fn learned_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.is_learned() {
                n += p.len()
            }
        });
        n
    }
}

/// Joins a parameter path, skipping empty prefixes.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
