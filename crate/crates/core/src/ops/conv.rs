//! 3D cross-correlation over `(T, H, W)` with zero padding.
//!
//! Temporal 1D (`k x 1 x 1`), spatial 2D (`1 x k x k`) and full 3D kernels are
//! all parameterizations of the same kernel. Grouped and depthwise convolution
//! are supported through `groups`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{config_err, dim_err, Result};
use crate::param::{join, Param, Parameters};
use crate::real::{Real, Strides};
use crate::tensor::{Shape, Tensor};

/// Kernel `[C_out, C_in / groups, kT, kH, kW]`, optional bias `[C_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<F> {
    pub kernel: Param<F>,
    pub bias: Option<Param<F>>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
}

impl<F: Real> ConvParams<F> {
    /// Zero kernel with unit stride, no padding and a single group.
    pub fn zeros(c_out: usize, c_in: usize, kernel: [usize; 3], bias: bool) -> Self {
        let [kt, kh, kw] = kernel;
        ConvParams {
            kernel: Param::zeros(&[c_out, c_in, kt, kh, kw]),
            bias: bias.then(|| Param::zeros(&[c_out])),
            stride: [1; 3],
            padding: [0; 3],
            groups: 1,
        }
    }

    /// Pads by `k / 2` on every axis so unit-stride output extents match the input.
    pub fn same(mut self) -> Result<Self> {
        let k = self.kernel_size();
        if k.iter().any(|&v| v % 2 == 0) {
            return Err(config_err!("'same' padding needs odd kernel extents, got {k:?}"));
        }
        self.padding = [k[0] / 2, k[1] / 2, k[2] / 2];
        Ok(self)
    }

    pub fn with_stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    /// Depthwise convolution: one `[1, kT, kH, kW]` filter per channel.
    pub fn depthwise(channels: usize, kernel: [usize; 3], bias: bool) -> Self {
        let mut p = Self::zeros(channels, 1, kernel, bias);
        p.groups = channels;
        p
    }

    /// He (fan-in) normal initialization of the kernel; bias reset to zero.
    pub fn init_he<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let fan_in = self.kernel.len() / self.c_out();
        let std = (2.0 / fan_in as f64).sqrt();
        self.kernel = Param::normal(&self.kernel.shape, std, rng);
        if let Some(b) = &mut self.bias {
            b.fill(F::zero());
        }
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape[0]
    }

    /// Total input channels (`groups * C_in_per_group`).
    pub fn c_in(&self) -> usize {
        self.kernel.shape[1] * self.groups
    }

    pub fn kernel_size(&self) -> [usize; 3] {
        [self.kernel.shape[2], self.kernel.shape[3], self.kernel.shape[4]]
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let k = self.kernel_size();
        let ext = [input.t(), input.h(), input.w()];
        let mut out = [0usize; 3];
        for a in 0..3 {
            if self.stride[a] == 0 {
                return Err(config_err!("convolution stride must be >= 1"));
            }
            let padded = ext[a] + 2 * self.padding[a];
            if padded < k[a] {
                return Err(dim_err!("kernel {k:?} larger than padded input {input}"));
            }
            out[a] = (padded - k[a]) / self.stride[a] + 1;
        }
        Ok(Shape::new(input.n(), out[0], out[1], out[2], self.c_out()))
    }
}

impl<F: Real> Parameters<F> for ConvParams<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        f(&join(prefix, "kernel"), &self.kernel);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads<F> {
    pub input: Tensor<F>,
    pub kernel: Vec<F>,
    pub bias: Option<Vec<F>>,
}

struct Geometry {
    input: Shape,
    output: Shape,
    k: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    groups: usize,
    cin_g: usize,
    cout_g: usize,
    kvol: usize,
    kdim: usize,
}

impl Geometry {
    fn new<F: Real>(x: Shape, p: &ConvParams<F>) -> Result<Self> {
        if p.groups == 0 || !p.c_out().is_multiple_of(p.groups) {
            return Err(config_err!("{} output channels not divisible into {} groups", p.c_out(), p.groups));
        }
        if x.c() != p.c_in() {
            return Err(dim_err!("convolution expects {} input channels, got {}", p.c_in(), x.c()));
        }
        if let Some(b) = &p.bias {
            if b.len() != p.c_out() {
                return Err(dim_err!("bias length {} != C_out {}", b.len(), p.c_out()));
            }
        }
        let output = p.output_shape(x)?;
        let k = p.kernel_size();
        let kvol = k[0] * k[1] * k[2];
        let cin_g = p.kernel.shape[1];
        Ok(Geometry {
            input: x,
            output,
            k,
            stride: p.stride,
            pad: p.padding,
            groups: p.groups,
            cin_g,
            cout_g: p.c_out() / p.groups,
            kvol,
            kdim: kvol * cin_g,
        })
    }

    fn rows(&self) -> usize {
        self.output.n() * self.output.volume()
    }

    /// A 1x1x1 unit-stride ungrouped conv reads the input as its own im2col matrix.
    fn pointwise(&self) -> bool {
        self.kvol == 1 && self.stride == [1; 3] && self.pad == [0; 3] && self.groups == 1
    }

    /// Input `(t, h, w)` for output site `o` and kernel tap `k`, if inside the unpadded input.
    #[inline]
    fn source(&self, o: [usize; 3], k: [usize; 3]) -> Option<[usize; 3]> {
        let ext = [self.input.t(), self.input.h(), self.input.w()];
        let mut r = [0usize; 3];
        for a in 0..3 {
            let pos = (o[a] * self.stride[a] + k[a]) as isize - self.pad[a] as isize;
            if pos < 0 || pos as usize >= ext[a] {
                return None;
            }
            r[a] = pos as usize;
        }
        Some(r)
    }

    fn taps(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [kt, kh, kw] = self.k;
        (0..kt).flat_map(move |a| (0..kh).flat_map(move |b| (0..kw).map(move |c| [a, b, c])))
    }

    /// Gathers the receptive fields of `group` into `cols` (`rows x kdim`, tap-major then channel).
    fn im2col<F: Real>(&self, x: &[F], group: usize, cols: &mut [F]) {
        let os = self.output;
        let c0 = group * self.cin_g;
        let line = os.w() * self.kdim;
        let taps: Vec<_> = self.taps().collect();
        cols.par_chunks_mut(line).enumerate().for_each(|(idx, chunk)| {
            let ho = idx % os.h();
            let to = (idx / os.h()) % os.t();
            let n = idx / (os.h() * os.t());
            for wo in 0..os.w() {
                let row = &mut chunk[wo * self.kdim..(wo + 1) * self.kdim];
                for (ki, &tap) in taps.iter().enumerate() {
                    let dst = &mut row[ki * self.cin_g..(ki + 1) * self.cin_g];
                    match self.source([to, ho, wo], tap) {
                        Some([t, h, w]) => {
                            let o = self.input.offset(n, t, h, w, c0);
                            dst.copy_from_slice(&x[o..o + self.cin_g]);
                        }
                        None => dst.iter_mut().for_each(|v| *v = F::zero()),
                    }
                }
            }
        });
    }

    /// Scatter-adds column gradients back onto the input gradient.
    fn col2im<F: Real>(&self, dcols: &[F], group: usize, dx: &mut [F]) {
        let os = self.output;
        let c0 = group * self.cin_g;
        let taps: Vec<_> = self.taps().collect();
        let mut row = 0;
        for n in 0..os.n() {
            for to in 0..os.t() {
                for ho in 0..os.h() {
                    for wo in 0..os.w() {
                        let r = &dcols[row * self.kdim..(row + 1) * self.kdim];
                        for (ki, &tap) in taps.iter().enumerate() {
                            if let Some([t, h, w]) = self.source([to, ho, wo], tap) {
                                let o = self.input.offset(n, t, h, w, c0);
                                for (d, &g) in dx[o..o + self.cin_g].iter_mut().zip(&r[ki * self.cin_g..]) {
                                    *d += g;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Kernel slice of `group` rearranged to a `kdim x cout_g` matrix.
    fn pack<F: Real>(&self, kernel: &[F], group: usize) -> Vec<F> {
        let mut w = vec![F::zero(); self.kdim * self.cout_g];
        for col in 0..self.cout_g {
            let co = group * self.cout_g + col;
            for ci in 0..self.cin_g {
                let base = (co * self.cin_g + ci) * self.kvol;
                for kk in 0..self.kvol {
                    w[(kk * self.cin_g + ci) * self.cout_g + col] = kernel[base + kk];
                }
            }
        }
        w
    }

    fn unpack_into<F: Real>(&self, packed: &[F], group: usize, kernel: &mut [F]) {
        for col in 0..self.cout_g {
            let co = group * self.cout_g + col;
            for ci in 0..self.cin_g {
                let base = (co * self.cin_g + ci) * self.kvol;
                for kk in 0..self.kvol {
                    kernel[base + kk] = packed[(kk * self.cin_g + ci) * self.cout_g + col];
                }
            }
        }
    }
}

pub fn conv3d<F: Real>(x: &Tensor<F>, p: &ConvParams<F>) -> Result<Tensor<F>> {
    let g = Geometry::new(x.shape(), p)?;
    let rows = g.rows();
    let c_out = p.c_out();
    let mut out = Tensor::zeros(g.output);
    let mut cols = if g.pointwise() { Vec::new() } else { vec![F::zero(); rows * g.kdim] };
    for group in 0..g.groups {
        let a: &[F] = if g.pointwise() {
            x.data()
        } else {
            g.im2col(x.data(), group, &mut cols);
            &cols
        };
        let w = g.pack(&p.kernel.value, group);
        F::gemm(
            rows,
            g.kdim,
            g.cout_g,
            F::one(),
            a,
            Strides::row_major(g.kdim),
            &w,
            Strides::row_major(g.cout_g),
            F::zero(),
            &mut out.data_mut()[group * g.cout_g..],
            Strides::row_major(c_out),
        );
    }
    if let Some(b) = &p.bias {
        for row in out.data_mut().chunks_exact_mut(c_out) {
            for (v, &bb) in row.iter_mut().zip(&b.value) {
                *v += bb;
            }
        }
    }
    Ok(out)
}

pub fn conv3d_backward<F: Real>(x: &Tensor<F>, p: &ConvParams<F>, grad: &Tensor<F>) -> Result<ConvGrads<F>> {
    let g = Geometry::new(x.shape(), p)?;
    if grad.shape() != g.output {
        return Err(dim_err!("conv backward: gradient {} does not match output {}", grad.shape(), g.output));
    }
    let rows = g.rows();
    let c_out = p.c_out();
    let gout = grad.data();

    let bias = p.bias.as_ref().map(|_| {
        let mut b = vec![F::zero(); c_out];
        for row in gout.chunks_exact(c_out) {
            for (acc, &v) in b.iter_mut().zip(row) {
                *acc += v;
            }
        }
        b
    });

    let mut kernel = vec![F::zero(); p.kernel.len()];
    let mut input = Tensor::zeros(g.input);
    let mut cols = if g.pointwise() { Vec::new() } else { vec![F::zero(); rows * g.kdim] };
    let mut dcols = if g.pointwise() { Vec::new() } else { vec![F::zero(); rows * g.kdim] };
    for group in 0..g.groups {
        let gslice = &gout[group * g.cout_g..];
        let a: &[F] = if g.pointwise() {
            x.data()
        } else {
            g.im2col(x.data(), group, &mut cols);
            &cols
        };
        let mut dw = vec![F::zero(); g.kdim * g.cout_g];
        F::gemm(
            g.kdim,
            rows,
            g.cout_g,
            F::one(),
            a,
            Strides::transposed(g.kdim),
            gslice,
            Strides::row_major(c_out),
            F::zero(),
            &mut dw,
            Strides::row_major(g.cout_g),
        );
        g.unpack_into(&dw, group, &mut kernel);

        let w = g.pack(&p.kernel.value, group);
        if g.pointwise() {
            F::gemm(
                rows,
                g.cout_g,
                g.kdim,
                F::one(),
                gslice,
                Strides::row_major(c_out),
                &w,
                Strides::transposed(g.cout_g),
                F::zero(),
                input.data_mut(),
                Strides::row_major(g.kdim),
            );
        } else {
            F::gemm(
                rows,
                g.cout_g,
                g.kdim,
                F::one(),
                gslice,
                Strides::row_major(c_out),
                &w,
                Strides::transposed(g.cout_g),
                F::zero(),
                &mut dcols,
                Strides::row_major(g.kdim),
            );
            g.col2im(&dcols, group, input.data_mut());
        }
    }
    Ok(ConvGrads { input, kernel, bias })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temporal_identity_kernel() {
        let mut p = ConvParams::<f64>::zeros(1, 1, [3, 1, 1], true).same().unwrap();
        p.kernel.value = vec![0.0, 1.0, 0.0];
        let x = Tensor::from_fn(Shape::new(1, 4, 2, 2, 1), |[_, t, h, w, _]| (t * 7 + h * 3 + w) as f64 - 4.0);
        assert_eq!(conv3d(&x, &p).unwrap(), x);
    }

    #[test]
    fn zero_kernel_outputs_bias() {
        let mut p = ConvParams::<f64>::zeros(2, 3, [1, 3, 3], true).same().unwrap();
        p.bias.as_mut().unwrap().fill(0.5);
        let x = Tensor::from_fn(Shape::new(2, 2, 3, 3, 3), |i| i.iter().sum::<usize>() as f64);
        let y = conv3d(&x, &p).unwrap();
        assert_eq!(y.shape(), x.shape().with_c(2));
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn even_kernel_rejected_for_same_padding() {
        assert!(matches!(ConvParams::<f64>::zeros(1, 1, [2, 1, 1], false).same(), Err(crate::Error::Config(_))));
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let p = ConvParams::<f64>::zeros(1, 2, [1, 1, 1], false);
        let x = Tensor::zeros(Shape::new(1, 1, 1, 1, 3));
        assert!(matches!(conv3d(&x, &p), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn strided_output_extents() {
        let p = ConvParams::<f64>::zeros(4, 2, [1, 3, 3], false).with_stride([1, 2, 2]).with_padding([0, 1, 1]);
        let s = p.output_shape(Shape::new(1, 8, 56, 56, 2)).unwrap();
        assert_eq!(s, Shape::new(1, 8, 28, 28, 4));
    }
}
