//! Scalar abstraction over `f32` (training) and `f64` (verification).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type tag used by the weight container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Row/column strides of a matrix operand, in elements.
#[derive(Debug, Clone, Copy)]
pub struct Strides {
    pub row: isize,
    pub col: isize,
}

impl Strides {
    /// Row-major contiguous matrix with `cols` columns.
    pub fn row_major(cols: usize) -> Self {
        Strides { row: cols as isize, col: 1 }
    }

    /// Transposed view of a row-major matrix that has `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Strides { row: 1, col: cols as isize }
    }
}

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    /// `c = alpha * a @ b + beta * c` for an `m x k` by `k x n` product.
    ///
    /// Panics when any operand slice is too short for the requested extents.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        sa: Strides,
        b: &[Self],
        sb: Strides,
        beta: Self,
        c: &mut [Self],
        sc: Strides,
    );

    fn write_le(self, out: &mut Vec<u8>);

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn span(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * s.row as usize + (cols - 1) * s.col as usize + 1
}

macro_rules! impl_real {
    ($t:ty, $dtype:expr, $gemm:path) => {
        impl Real for $t {
            const DTYPE: DType = $dtype;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                sa: Strides,
                b: &[Self],
                sb: Strides,
                beta: Self,
                c: &mut [Self],
                sc: Strides,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(a.len() >= span(m, k, sa), "gemm: lhs too short");
                assert!(b.len() >= span(k, n, sb), "gemm: rhs too short");
                assert!(c.len() >= span(m, n, sc), "gemm: output too short");
                // SAFETY: every operand was checked above to cover the strided
                // extents that the kernel reads or writes.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        sa.row,
                        sa.col,
                        b.as_ptr(),
                        sb.row,
                        sb.col,
                        beta,
                        c.as_mut_ptr(),
                        sc.row,
                        sc.col,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
        }
    };
}

impl_real!(f32, DType::F32, matrixmultiply::sgemm);
impl_real!(f64, DType::F64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_loops() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect(); // 3x4
        let mut c = vec![1.0; 8];
        f64::gemm(
            2,
            3,
            4,
            1.0,
            &a,
            Strides::row_major(3),
            &b,
            Strides::row_major(4),
            1.0,
            &mut c,
            Strides::row_major(4),
        );
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = 1.0 + (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum::<f64>();
                assert_eq!(c[i * 4 + j], want);
            }
        }
    }

    #[test]
    fn dtype_tags_roundtrip() {
        for d in [DType::F32, DType::F64] {
            assert_eq!(DType::from_tag(d.tag()), Some(d));
        }
        assert_eq!(DType::from_tag(9), None);
    }
}
