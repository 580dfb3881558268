//! Compact fourth-order (Numerov-type) radial operators on one edge.
//!
//! The reduced problem is `−u'' + V u = g` on `(0, L_max)` with the vertex
//! condition `u'(0) = σ u(0) − s` and `u(L_max) = 0`; a graph δ of strength
//! `η` and a vertex coefficient `γ` on `N` edges reduce to `s = η/N` and
//! `σ = γ/N`. The scheme is `A u = B g + (2s/h) e_0` where interior rows are
//! the classical Numerov rows
//!
//! `(−u_{i−1} + 2u_i − u_{i+1})/h² + (V u)_{i±1,i}/12-weights = B g`,
//!
//! and the vertex row is the fourth-order one-sided relation
//! `(u_2 − u_0)/(2h) − h(u''_0 + 2u''_1)/3 = u'(0)` scaled by `−2/h`. That row
//! touches `u_2`, so `A` is tridiagonal plus one entry at `(0, 2)`; it is
//! eliminated against row 1 before factoring.
//!
//! Vectors have one entry per grid point; the last (Dirichlet) entry is
//! ignored on input and zero on output.

use crate::tridiag::{tri_matvec, Scalar, SingularPivot, TriLu};
use num_complex::Complex64;
use std::ops::{Add, Div, Mul, Sub};

/// Tridiagonal bands with one extra entry `e02` at row 0, column 2.
#[derive(Debug, Clone)]
pub struct Bands<T> {
    pub dl: Vec<T>,
    pub d: Vec<T>,
    pub du: Vec<T>,
    pub e02: T,
}

impl<T: Scalar> Bands<T> {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Matrix-vector product on the unknowns.
    pub fn matvec<S>(&self, x: &[S]) -> Vec<S>
    where
        S: Copy + Add<Output = S> + Mul<T, Output = S>,
    {
        let mut y = tri_matvec(&self.dl, &self.d, &self.du, &x[..self.len()]);
        if self.len() > 2 {
            y[0] = y[0] + x[2] * self.e02;
        }
        y
    }

    /// Eliminate the `(0, 2)` entry with row 1 and factor.
    pub fn factor(&self) -> Result<VertexLu<T>, SingularPivot> {
        let mut d = self.d.clone();
        let mut du = self.du.clone();
        let mut c = T::zero();
        if self.len() > 2 && self.e02 != T::zero() {
            c = self.e02 / self.du[1];
            d[0] = d[0] - c * self.dl[0];
            du[0] = du[0] - c * self.d[1];
        }
        let lu = TriLu::factor(self.dl.clone(), d, du)?;
        Ok(VertexLu { c, lu })
    }

    /// Bands of `a·self + b·other` (same shape) as complex numbers.
    pub fn combine(&self, a: Complex64, other: &Bands<T>, b: Complex64) -> Bands<Complex64>
    where
        T: Into<f64>,
    {
        let mix = |x: &[T], y: &[T]| -> Vec<Complex64> {
            x.iter()
                .zip(y)
                .map(|(&p, &q)| a * p.into() + b * q.into())
                .collect()
        };
        Bands {
            dl: mix(&self.dl, &other.dl),
            d: mix(&self.d, &other.d),
            du: mix(&self.du, &other.du),
            e02: a * self.e02.into() + b * other.e02.into(),
        }
    }
}

/// Factorization of [`Bands`] after eliminating the vertex-row extra entry.
#[derive(Debug, Clone)]
pub struct VertexLu<T> {
    c: T,
    lu: TriLu<T>,
}

impl<T: Scalar> VertexLu<T> {
    pub fn len(&self) -> usize {
        self.lu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lu.is_empty()
    }

    pub fn pivot_ratio(&self) -> f64 {
        self.lu.pivot_ratio()
    }

    pub fn solve_in_place<S>(&self, b: &mut [S])
    where
        S: Copy + Sub<Output = S> + Mul<T, Output = S> + Div<T, Output = S>,
    {
        if b.len() > 2 {
            b[0] = b[0] - b[1] * self.c;
        }
        self.lu.solve_in_place(b);
    }
}

/// Geometry of the compact scheme on one edge.
#[derive(Debug, Clone)]
pub struct CompactGrid {
    h: f64,
    n: usize,
    b: Bands<f64>,
    b_lu: VertexLu<f64>,
}

impl CompactGrid {
    /// `n` grid points with spacing `h`; the unknowns are indices `0..n-1`.
    pub fn new(n: usize, h: f64) -> Self {
        let m = n - 1;
        let dl = vec![1.0 / 12.0; m - 1];
        let mut d = vec![10.0 / 12.0; m];
        let mut du = vec![1.0 / 12.0; m - 1];
        d[0] = 2.0 / 3.0;
        du[0] = 4.0 / 3.0;
        let b = Bands {
            dl,
            d,
            du,
            e02: 0.0,
        };
        let b_lu = b.factor().expect("mass matrix is nonsingular");
        Self { h, n, b, b_lu }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Total number of grid points (including the Dirichlet end).
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Number of unknowns.
    pub fn m(&self) -> usize {
        self.n - 1
    }

    /// Lumped vertex weight `h/2`.
    pub fn w0(&self) -> f64 {
        self.h / 2.0
    }

    /// Lumped weights on one edge (vertex `h/2`).
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![self.h; self.n];
        w[0] = self.h / 2.0;
        w[self.n - 1] = 0.0;
        w
    }

    pub fn b_bands(&self) -> &Bands<f64> {
        &self.b
    }

    /// Bands of `A` for the potential `v` and vertex coefficient `sigma`.
    pub fn a_bands(&self, v: &[f64], sigma: f64) -> Bands<f64> {
        let m = self.m();
        let ih2 = 1.0 / (self.h * self.h);
        let mut dl = vec![0.0; m - 1];
        let mut d = vec![0.0; m];
        let mut du = vec![0.0; m - 1];
        d[0] = ih2 + 2.0 / 3.0 * v[0] + 2.0 * sigma / self.h;
        du[0] = 4.0 / 3.0 * v[1];
        for i in 1..m {
            dl[i - 1] = -ih2 + v[i - 1] / 12.0;
            d[i] = 2.0 * ih2 + 10.0 / 12.0 * v[i];
            if i + 1 < m {
                du[i] = -ih2 + v[i + 1] / 12.0;
            }
        }
        Bands {
            dl,
            d,
            du,
            e02: -ih2,
        }
    }

    /// `B x` on the unknowns, padded with the Dirichlet zero.
    pub fn b_apply<S>(&self, x: &[S]) -> Vec<S>
    where
        S: Copy + Add<Output = S> + Mul<f64, Output = S> + Default,
    {
        let mut y = self.b.matvec(x);
        y.push(S::default());
        y
    }

    /// `B⁻¹ x`, padded with the Dirichlet zero.
    pub fn b_solve<S>(&self, x: &[S]) -> Vec<S>
    where
        S: Copy + Sub<Output = S> + Mul<f64, Output = S> + Div<f64, Output = S> + Default,
    {
        let mut y = x[..self.m()].to_vec();
        self.b_lu.solve_in_place(&mut y);
        y.push(S::default());
        y
    }

    /// `B⁻¹ A u`: the discrete `−u'' + V u` plus the vertex-flux defect.
    pub fn apply<S>(&self, v: &[f64], sigma: f64, u: &[S]) -> Vec<S>
    where
        S: Copy
            + Add<Output = S>
            + Sub<Output = S>
            + Mul<f64, Output = S>
            + Div<f64, Output = S>
            + Default,
    {
        let au = self.a_bands(v, sigma).matvec(u);
        self.b_solve(&au)
    }

    /// Right-hand side `B g + (2s/h) e_0` on the unknowns.
    pub fn rhs<S>(&self, g: &[S], source: S) -> Vec<S>
    where
        S: Copy + Add<Output = S> + Mul<f64, Output = S> + Default,
    {
        let mut r = self.b.matvec(g);
        r[0] = r[0] + source * (2.0 / self.h);
        r
    }

    /// Solve `−u'' + V u = g`, `u'(0) = σu(0) − s` with a prefactored `A`.
    pub fn solve_with<T, S>(&self, lu: &VertexLu<T>, g: &[S], source: S) -> Vec<S>
    where
        T: Scalar,
        S: Copy
            + Add<Output = S>
            + Sub<Output = S>
            + Mul<f64, Output = S>
            + Mul<T, Output = S>
            + Div<T, Output = S>
            + Default,
    {
        let mut r = self.rhs(g, source);
        lu.solve_in_place(&mut r);
        r.push(S::default());
        r
    }

    /// Lumped inner product of real sequences on one edge.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = a[0] * b[0] * self.w0();
        for i in 1..self.m() {
            s += a[i] * b[i] * self.h;
        }
        s
    }
}
