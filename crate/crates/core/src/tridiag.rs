//! Tridiagonal LU factorization with partial pivoting.
//!
//! Follows the LAPACK `gttrf`/`gttrs` layout: row interchanges introduce a
//! second superdiagonal `du2`. The factorization is kept so that several
//! right-hand sides can reuse it.

use num_complex::Complex64;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar field usable by the tridiagonal solver.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + PartialEq
{
    fn zero() -> Self;
    fn modulus(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Returned when a pivot vanishes exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingularPivot(pub usize);

/// Factorized tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct TriLu<T> {
    dl: Vec<T>,
    d: Vec<T>,
    du: Vec<T>,
    du2: Vec<T>,
    ipiv: Vec<usize>,
}

impl<T: Scalar> TriLu<T> {
    /// Factor the matrix with sub-diagonal `dl` (len n-1), diagonal `d` (len n)
    /// and super-diagonal `du` (len n-1).
    pub fn factor(mut dl: Vec<T>, mut d: Vec<T>, mut du: Vec<T>) -> Result<Self, SingularPivot> {
        let n = d.len();
        assert!(n >= 1 && dl.len() + 1 == n && du.len() + 1 == n);
        let mut du2 = vec![T::zero(); n.saturating_sub(2)];
        let mut ipiv: Vec<usize> = (0..n).collect();
        for i in 0..n.saturating_sub(1) {
            if d[i].modulus() >= dl[i].modulus() {
                if d[i] != T::zero() {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] = d[i + 1] - fact * du[i];
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                ipiv[i] = i + 1;
            }
        }
        if let Some(i) = d.iter().position(|&p| p == T::zero()) {
            return Err(SingularPivot(i));
        }
        Ok(Self {
            dl,
            d,
            du,
            du2,
            ipiv,
        })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Smallest pivot modulus relative to the largest; a cheap conditioning hint.
    pub fn pivot_ratio(&self) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for p in &self.d {
            lo = lo.min(p.modulus());
            hi = hi.max(p.modulus());
        }
        if hi == 0.0 {
            0.0
        } else {
            lo / hi
        }
    }

    /// Solve in place; `b` must have the factor's length.
    pub fn solve_in_place<S>(&self, b: &mut [S])
    where
        S: Copy + Sub<Output = S> + Mul<T, Output = S> + Div<T, Output = S>,
    {
        let n = self.d.len();
        assert_eq!(b.len(), n);
        for i in 0..n.saturating_sub(1) {
            let ip = self.ipiv[i];
            let other = 2 * i + 1 - ip;
            let temp = b[other] - b[ip] * self.dl[i];
            b[i] = b[ip];
            b[i + 1] = temp;
        }
        b[n - 1] = b[n - 1] / self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - b[n - 1] * self.du[n - 2]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - b[i + 1] * self.du[i] - b[i + 2] * self.du2[i]) / self.d[i];
        }
    }
}

/// Multiply a tridiagonal matrix by a vector.
pub fn tri_matvec<T, S>(dl: &[T], d: &[T], du: &[T], x: &[S]) -> Vec<S>
where
    T: Copy,
    S: Copy + Add<Output = S> + Mul<T, Output = S>,
{
    let n = d.len();
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = x[i] * d[i];
        if i > 0 {
            acc = acc + x[i - 1] * dl[i - 1];
        }
        if i + 1 < n {
            acc = acc + x[i + 1] * du[i];
        }
        y.push(acc);
    }
    y
}
