//! The element type abstraction shared by all differentiable code.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point element for tapes, networks, and optimizers.
///
/// Implemented for `f32` (training) and `f64` (gradient-check mode). All
/// stochastic draws are made in `f64` and converted through [`Scalar::from_f64`]
/// so the draw sequence is identical in both modes.
pub trait Scalar:
    'static
    + Copy
    + Send
    + Sync
    + Debug
    + Display
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + ndarray::ScalarOperand
    + num_traits::Zero
    + num_traits::One
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn maxs(self, other: Self) -> Self;
    fn mins(self, other: Self) -> Self;

    /// Dense `C = alpha * op(A) * op(B) + beta * C` for row-major contiguous
    /// buffers; returns `false` if no accelerated backend exists for this
    /// element type, in which case the caller falls back to `ndarray`.
    ///
    /// # Safety
    /// Pointers must reference buffers of the implied sizes: `op(A)` is
    /// `m x k`, `op(B)` is `k x n`, `C` is `m x n`.
    #[allow(clippy::too_many_arguments)] // BLAS calling convention
    unsafe fn gemm_into(
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: *const Self,
        lda: usize,
        trans_a: bool,
        b: *const Self,
        ldb: usize,
        trans_b: bool,
        beta: Self,
        c: *mut Self,
        ldc: usize,
    ) -> bool;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln(self) -> Self {
        f32::ln(self)
    }
    fn tanh(self) -> Self {
        f32::tanh(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn powi(self, n: i32) -> Self {
        f32::powi(self, n)
    }
    fn maxs(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn mins(self, other: Self) -> Self {
        f32::min(self, other)
    }

    #[allow(clippy::too_many_arguments)] // BLAS calling convention
    unsafe fn gemm_into(
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: *const Self,
        lda: usize,
        trans_a: bool,
        b: *const Self,
        ldb: usize,
        trans_b: bool,
        beta: Self,
        c: *mut Self,
        ldc: usize,
    ) -> bool {
        super::matmul::sgemm(
            m, n, k, alpha, a, lda, trans_a, b, ldb, trans_b, beta, c, ldc,
        )
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn maxs(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn mins(self, other: Self) -> Self {
        f64::min(self, other)
    }

    #[allow(clippy::too_many_arguments)] // BLAS calling convention
    unsafe fn gemm_into(
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: *const Self,
        lda: usize,
        trans_a: bool,
        b: *const Self,
        ldb: usize,
        trans_b: bool,
        beta: Self,
        c: *mut Self,
        ldc: usize,
    ) -> bool {
        super::matmul::dgemm(
            m, n, k, alpha, a, lda, trans_a, b, ldb, trans_b, beta, c, ldc,
        )
    }
}
