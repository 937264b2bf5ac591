//! Floating point element type shared by every numeric kernel.
//!
//! Training runs in `f32`; the gradient checker instantiates the same model in
//! `f64`.

use core::fmt::Debug;
use core::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

pub trait Scalar: Float + FromPrimitive + NumAssign + Sum + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a * b + beta * c` over strided row/column views.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`. With `beta == 0` the
    /// previous contents of `c` are ignored.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    );

    fn erf(self) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

#[inline]
fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path, $erf:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                assert!(a.len() >= extent(m, k, rsa, csa), "gemm: lhs too short");
                assert!(b.len() >= extent(k, n, rsb, csb), "gemm: rhs too short");
                assert!(c.len() >= extent(m, n, rsc, csc), "gemm: out too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index the kernel touches is inside the extents
                // asserted above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    )
                }
            }

            #[inline]
            fn erf(self) -> Self {
                $erf(self)
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm, libm::erff);
impl_scalar!(f64, matrixmultiply::dgemm, libm::erf);

/// Row-major `c (m x n) = a (m x k) * b (k x n)`, optionally accumulating.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, k, 1, b, n, 1, beta, c, n, 1);
}

/// `c (m x n) = a (m x k) * b^T` where `b` is stored `n x k`.
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, k, 1, b, 1, k, beta, c, n, 1);
}

/// `c (m x n) = a^T * b` where `a` is stored `k x m` and `b` is `k x n`.
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, 1, m, b, n, 1, beta, c, n, 1);
}
