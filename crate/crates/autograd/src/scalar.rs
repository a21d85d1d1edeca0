//! Scalar element types the tape can run on.
//!
//! `f32` is the training type, `f64` is used for finite-difference checks and
//! [`Dual`] carries a forward-mode tangent through an entire reverse pass,
//! which yields exact Hessian-vector products (used by the R1 penalty).

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(v: f64) -> Self;

    /// Primal value. Branching ops (leaky relu, softplus) decide on this.
    fn re(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;

    #[inline]
    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    #[inline]
    fn one() -> Self {
        Self::from_f64(1.0)
    }

    /// `c (+)= a · b` for an `m × k` matrix `a` and a `k × n` matrix `b`,
    /// with arbitrary element strides (row stride, column stride). `c` is
    /// dense row-major `m × n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        c: &mut [Self],
        accumulate: bool,
    );
}

fn check_gemm_bounds<T>(m: usize, k: usize, n: usize, a: &[T], sa: (isize, isize), b: &[T], sb: (isize, isize), c: &[T]) {
    let span = |rows: usize, cols: usize, s: (isize, isize)| -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        ((rows as isize - 1) * s.0 + (cols as isize - 1) * s.1) as usize + 1
    };
    assert!(span(m, k, sa) <= a.len(), "gemm: lhs out of bounds");
    assert!(span(k, n, sb) <= b.len(), "gemm: rhs out of bounds");
    assert!(m * n <= c.len(), "gemm: output out of bounds");
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn re(self) -> f64 {
        self as f64
    }
    #[inline]
    fn exp(self) -> Self {
        f32::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f32::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f32::tanh(self)
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[f32], sa: (isize, isize), b: &[f32], sb: (isize, isize), c: &mut [f32], accumulate: bool) {
        check_gemm_bounds(m, k, n, a, sa, b, sb, c);
        if m == 0 || n == 0 {
            return;
        }
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: bounds were checked above for the given shapes and strides.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), sa.0, sa.1, b.as_ptr(), sb.0, sb.1, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (isize, isize), b: &[f64], sb: (isize, isize), c: &mut [f64], accumulate: bool) {
        check_gemm_bounds(m, k, n, a, sa, b, sb, c);
        if m == 0 || n == 0 {
            return;
        }
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: bounds were checked above for the given shapes and strides.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), sa.0, sa.1, b.as_ptr(), sb.0, sb.1, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

/// First-order dual number `re + du·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual<F> {
    pub re: F,
    pub du: F,
}

impl<F: Scalar> Dual<F> {
    pub fn new(re: F, du: F) -> Self {
        Self { re, du }
    }

    pub fn constant(re: F) -> Self {
        Self { re, du: F::zero() }
    }
}

impl<F: Scalar> Add for Dual<F> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.du + o.du)
    }
}

impl<F: Scalar> Sub for Dual<F> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.du - o.du)
    }
}

impl<F: Scalar> Mul for Dual<F> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.du + self.du * o.re)
    }
}

impl<F: Scalar> Div for Dual<F> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Self::new(q, (self.du - q * o.du) / o.re)
    }
}

impl<F: Scalar> Neg for Dual<F> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.du)
    }
}

impl<F: Scalar> AddAssign for Dual<F> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<F: Scalar> SubAssign for Dual<F> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<F: Scalar> MulAssign for Dual<F> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<F: Scalar> Scalar for Dual<F> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Self::constant(F::from_f64(v))
    }
    #[inline]
    fn re(self) -> f64 {
        self.re.re()
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Self::new(e, e * self.du)
    }
    #[inline]
    fn ln(self) -> Self {
        Self::new(self.re.ln(), self.du / self.re)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Self::new(s, self.du / (F::from_f64(2.0) * s))
    }
    #[inline]
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Self::new(t, (F::one() - t * t) * self.du)
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[Self], sa: (isize, isize), b: &[Self], sb: (isize, isize), c: &mut [Self], accumulate: bool) {
        check_gemm_bounds(m, k, n, a, sa, b, sb, c);
        let (a_re, a_du): (Vec<F>, Vec<F>) = a.iter().map(|d| (d.re, d.du)).unzip();
        let (b_re, b_du): (Vec<F>, Vec<F>) = b.iter().map(|d| (d.re, d.du)).unzip();
        let len = m * n;
        let (mut c_re, mut c_du): (Vec<F>, Vec<F>) = if accumulate {
            c[..len].iter().map(|d| (d.re, d.du)).unzip()
        } else {
            (vec![F::zero(); len], vec![F::zero(); len])
        };
        F::gemm(m, k, n, &a_re, sa, &b_re, sb, &mut c_re, accumulate);
        F::gemm(m, k, n, &a_re, sa, &b_du, sb, &mut c_du, accumulate);
        F::gemm(m, k, n, &a_du, sa, &b_re, sb, &mut c_du, true);
        for (dst, (re, du)) in c[..len].iter_mut().zip(c_re.into_iter().zip(c_du)) {
            *dst = Dual::new(re, du);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
        let mut c = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = T::zero();
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn f64_gemm_matches_naive_with_transposed_operand() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let expect = naive(m, k, n, &a, &b);
        // a stored transposed: at[p*m + i] = a[i*k + p]
        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c = vec![0.0; m * n];
        f64::gemm(m, k, n, &at, (1, m as isize), &b, (n as isize, 1), &mut c, false);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        f64::gemm(m, k, n, &a, (k as isize, 1), &b, (n as isize, 1), &mut c, true);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - 2.0 * y).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_gemm_is_product_rule() {
        let (m, k, n) = (2, 3, 2);
        let a: Vec<Dual<f64>> = (0..m * k).map(|i| Dual::new(i as f64 + 1.0, 0.5 * i as f64)).collect();
        let b: Vec<Dual<f64>> = (0..k * n).map(|i| Dual::new(1.0 - i as f64, (i as f64).cos())).collect();
        let expect = naive(m, k, n, &a, &b);
        let mut c = vec![Dual::default(); m * n];
        Dual::gemm(m, k, n, &a, (k as isize, 1), &b, (n as isize, 1), &mut c, false);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x.re - y.re).abs() < 1e-12 && (x.du - y.du).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_elementary_derivatives() {
        let x = Dual::new(0.3f64, 1.0);
        assert!((x.exp().du - 0.3f64.exp()).abs() < 1e-15);
        assert!((x.ln().du - 1.0 / 0.3).abs() < 1e-12);
        assert!((x.sqrt().du - 0.5 / 0.3f64.sqrt()).abs() < 1e-12);
        assert!((x.tanh().du - (1.0 - 0.3f64.tanh().powi(2))).abs() < 1e-15);
        assert!(((x / Dual::new(2.0, 0.0)).du - 0.5).abs() < 1e-15);
    }
}
