//! Dense float tensors and the scalar abstraction shared by the f32
//! training path and the f64 verification path.

mod gemm;
mod kernels;

pub use gemm::{gemm, matmul_flops};
pub use kernels::*;

use crate::error::{Error, Result};

/// Floating-point element type of the engine.
///
/// `f32` is the training/inference type; `f64` backs the gradient-check
/// harness and the dense formula oracles. `exp_fast` is a polynomial
/// approximation on `f32` (relative error < 1e-6, deterministic) because
/// softmax evaluation dominates attention runtime; `f64` uses libm.
pub trait Scalar:
    Copy
    + Clone
    + Default
    + PartialOrd
    + PartialEq
    + Send
    + Sync
    + 'static
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }

    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn exp_fast(self) -> Self;
    fn is_finite(self) -> bool;
    fn is_nan(self) -> bool;
    fn max_s(self, other: Self) -> Self;
    fn min_s(self, other: Self) -> Self;

    /// General matrix multiply C = alpha*A*B + beta*C with explicit strides.
    ///
    /// # Safety
    /// Pointers must cover the strided index ranges implied by (m, k, n).
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
}

/// Cephes-style expf: range reduction to [-ln2/2, ln2/2] plus a degree-6
/// polynomial, scaled by a bit-constructed power of two.
#[inline(always)]
fn expf_poly(x: f32) -> f32 {
    let x = x.clamp(-87.0, 88.0);
    let z = (std::f32::consts::LOG2_E * x + 0.5).floor();
    let mut r = x - z * 0.693_359_375;
    r -= z * -2.121_944_4e-4;
    let n = z as i32;
    let r2 = r * r;
    let mut p = 1.987_569_15e-4_f32;
    p = p * r + 1.398_199_95e-3;
    p = p * r + 8.333_451_9e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_55e-1;
    p = p * r + 5.000_000_1e-1;
    let poly = p * r2 + r + 1.0;
    let scale = f32::from_bits(((n + 127) as u32) << 23);
    poly * scale
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f32::abs(self)
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f32::exp(self)
    }
    #[inline(always)]
    fn ln(self) -> Self {
        f32::ln(self)
    }
    #[inline(always)]
    fn exp_fast(self) -> Self {
        expf_poly(self)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    #[inline(always)]
    fn is_nan(self) -> bool {
        f32::is_nan(self)
    }
    #[inline(always)]
    fn max_s(self, other: Self) -> Self {
        f32::max(self, other)
    }
    #[inline(always)]
    fn min_s(self, other: Self) -> Self {
        f32::min(self, other)
    }

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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline(always)]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline(always)]
    fn exp_fast(self) -> Self {
        f64::exp(self)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline(always)]
    fn is_nan(self) -> bool {
        f64::is_nan(self)
    }
    #[inline(always)]
    fn max_s(self, other: Self) -> Self {
        f64::max(self, other)
    }
    #[inline(always)]
    fn min_s(self, other: Self) -> Self {
        f64::min(self, other)
    }

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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense row-major tensor. The last axis is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::ZERO; n],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {} elements to {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Convert element type (f32 <-> f64).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Deterministic sum (fixed-chunk pairwise accumulation).
    pub fn sum(&self) -> T {
        stable_sum(&self.data)
    }

    pub fn min_value(&self) -> T {
        self.data
            .iter()
            .fold(self.data[0], |acc, &v| acc.min_s(v))
    }

    pub fn max_value(&self) -> T {
        self.data
            .iter()
            .fold(self.data[0], |acc, &v| acc.max_s(v))
    }

    /// 4-D accessor helpers; shape must be (n, c, h, w).
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(Error::dim(format!("expected 4-D tensor, got {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        if self.shape.len() != 3 {
            return Err(Error::dim(format!("expected 3-D tensor, got {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2]))
    }
}

/// Deterministic sum independent of thread count: fixed 8192-element chunks
/// are reduced serially, then chunk sums are folded in index order.
pub fn stable_sum<T: Scalar>(xs: &[T]) -> T {
    const CHUNK: usize = 8192;
    if xs.len() <= CHUNK {
        return xs.iter().copied().sum();
    }
    let partial: Vec<T> = xs.chunks(CHUNK).map(|c| c.iter().copied().sum()).collect();
    partial.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expf_poly_matches_libm() {
        let mut worst = 0.0f64;
        for i in -8000..=8000 {
            let x = i as f32 * 0.01;
            let got = x.exp_fast() as f64;
            let want = (x as f64).exp();
            let rel = ((got - want) / want).abs();
            if rel > worst {
                worst = rel;
            }
        }
        assert!(worst < 1e-6, "expf_poly worst rel err {worst}");
    }

    #[test]
    fn stable_sum_matches_serial() {
        let xs: Vec<f64> = (0..50_000).map(|i| (i as f64).sin()).collect();
        let serial: f64 = xs.iter().sum();
        assert!((stable_sum(&xs) - serial).abs() < 1e-9);
    }

    #[test]
    fn reshape_rejects_bad_count() {
        let t = Tensor::<f32>::zeros(&[2, 3]);
        assert!(t.reshaped(&[7]).is_err());
    }
}
