//! Scalar abstraction over the two storage precisions.
//!
//! Training runs in `f32`; every oracle and gradient check runs in `f64`.
//! All models and ops are generic over [`Real`] so the same code path serves both.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Tag written into checkpoint headers.
    const DTYPE: &'static str;
    const BYTES: usize;

    /// `C = alpha * A·B + beta * C` on strided row/column views.
    ///
    /// # Safety
    /// Every index `i*rs + j*cs` reachable for the given dimensions must lie
    /// inside the corresponding allocation, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn f(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("real converts to f64")
    }
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// A strided matrix view: `rows × cols` starting at `offset`.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub const fn row_major(cols: usize) -> Self {
        Layout { offset: 0, rs: cols, cs: 1 }
    }

    pub const fn transposed(cols: usize) -> Self {
        // view of a row-major [r × cols] buffer as its transpose
        Layout { offset: 0, rs: 1, cs: cols }
    }

    pub const fn at(self, offset: usize) -> Self {
        Layout { offset, ..self }
    }

    fn last_index(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows.max(1) - 1) * self.rs + (cols.max(1) - 1) * self.cs
    }
}

/// Bounds-checked GEMM: `c[m×n] = alpha * a[m×k] · b[k×n] + beta * c`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
    beta: T,
    c: &mut [T],
    lc: Layout,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = lc.offset + i * lc.rs + j * lc.cs;
                c[idx] = if beta == T::zero() { T::zero() } else { beta * c[idx] };
            }
        }
        return;
    }
    assert!(la.last_index(m, k) < a.len(), "gemm: A view out of bounds");
    assert!(lb.last_index(k, n) < b.len(), "gemm: B view out of bounds");
    assert!(lc.last_index(m, n) < c.len(), "gemm: C view out of bounds");
    // SAFETY: all reachable indices were bounds-checked above; `c` is a unique borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(la.offset),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr().add(lb.offset),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr().add(lc.offset),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}
