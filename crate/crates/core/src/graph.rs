//! Star-graph grids, sampled functions, quadrature, norms and the discrete
//! Hamiltonian `H_γ = -∂² + γδ`.
//!
//! Every edge carries the same uniform grid `y_i = i h`, `i = 0..n_points`,
//! with the vertex at `y = 0` and a homogeneous Dirichlet condition at
//! `y = L_max`. A radial function stores a single edge sequence.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;

/// Relative tolerance used to decide vertex continuity and radial symmetry.
pub const MATCH_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("edge values disagree at the vertex (spread {0:e})")]
    VertexMismatch(f64),
    #[error("function is not radial (edge spread {0:e})")]
    NotRadial(f64),
    #[error("functions live on different grids")]
    GridMismatch,
    #[error("non-finite sample")]
    NonFinite,
}

/// Uniform discretization of an N-edge star graph truncated at `l_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphGrid {
    pub n_edges: usize,
    pub l_max: f64,
    pub n_points: usize,
}

impl GraphGrid {
    pub const DEFAULT_L_MAX: f64 = 20.0;
    pub const DEFAULT_POINTS: usize = 4001;

    pub fn new(n_edges: usize, l_max: f64, n_points: usize) -> Result<Self, GraphError> {
        if n_edges < 2 {
            return Err(GraphError::InvalidGrid(format!("n_edges = {n_edges} < 2")));
        }
        if n_points < 16 {
            return Err(GraphError::InvalidGrid(format!(
                "n_points = {n_points} < 16"
            )));
        }
        if !(l_max.is_finite() && l_max > 0.0) {
            return Err(GraphError::InvalidGrid(format!("l_max = {l_max}")));
        }
        Ok(Self {
            n_edges,
            l_max,
            n_points,
        })
    }

    /// Default grid: `L_max = 20`, 4001 points per edge.
    pub fn standard(n_edges: usize) -> Result<Self, GraphError> {
        Self::new(n_edges, Self::DEFAULT_L_MAX, Self::DEFAULT_POINTS)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        Self::new(self.n_edges, self.l_max, self.n_points).map(|_| ())
    }

    pub fn h(&self) -> f64 {
        self.l_max / (self.n_points - 1) as f64
    }

    pub fn y(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.y(i)).collect()
    }

    /// Composite Simpson weights on one edge; an odd interval count closes
    /// the last cell with the trapezoid rule.
    pub fn simpson_weights(&self) -> Vec<f64> {
        let n = self.n_points;
        let h = self.h();
        let mut w = vec![0.0; n];
        let intervals = n - 1;
        let simpson_end = if intervals % 2 == 0 { n - 1 } else { n - 2 };
        for i in (0..simpson_end).step_by(2) {
            w[i] += h / 3.0;
            w[i + 1] += 4.0 * h / 3.0;
            w[i + 2] += h / 3.0;
        }
        if simpson_end < n - 1 {
            w[n - 2] += h / 2.0;
            w[n - 1] += h / 2.0;
        }
        w
    }

    /// Lumped (trapezoid) weights on one edge: `h/2` at both ends, `h` inside.
    pub fn lumped_weights(&self) -> Vec<f64> {
        let h = self.h();
        let mut w = vec![h; self.n_points];
        w[0] = h / 2.0;
        w[self.n_points - 1] = h / 2.0;
        w
    }
}

/// Weight factor for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weight {
    One,
    Y,
    Y2,
}

impl Weight {
    fn at(self, y: f64) -> f64 {
        match self {
            Weight::One => 1.0,
            Weight::Y => y,
            Weight::Y2 => y * y,
        }
    }
}

/// The vertex condition `Σ u_j'(0) = γ u(0)` with continuity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertexCondition {
    pub gamma: f64,
}

/// Complex samples on a star graph. Radial functions store one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFunction {
    grid: GraphGrid,
    edges: Vec<Vec<C64>>,
}

impl GraphFunction {
    pub fn radial(grid: GraphGrid, values: Vec<C64>) -> Self {
        assert_eq!(values.len(), grid.n_points, "radial sample count");
        Self {
            grid,
            edges: vec![values],
        }
    }

    pub fn radial_real(grid: GraphGrid, values: &[f64]) -> Self {
        Self::radial(grid, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn from_fn(grid: GraphGrid, f: impl Fn(f64) -> C64) -> Self {
        let values = (0..grid.n_points).map(|i| f(grid.y(i))).collect();
        Self::radial(grid, values)
    }

    pub fn from_real_fn(grid: GraphGrid, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, |y| C64::new(f(y), 0.0))
    }

    pub fn zeros(grid: GraphGrid) -> Self {
        Self::radial(grid, vec![C64::new(0.0, 0.0); grid.n_points])
    }

    /// Per-edge samples; `edges.len()` must equal the grid's edge count.
    pub fn from_edges(grid: GraphGrid, edges: Vec<Vec<C64>>) -> Result<Self, GraphError> {
        if edges.len() != grid.n_edges || edges.iter().any(|e| e.len() != grid.n_points) {
            return Err(GraphError::GridMismatch);
        }
        Ok(Self { grid, edges })
    }

    pub fn grid(&self) -> &GraphGrid {
        &self.grid
    }

    pub fn is_radial(&self) -> bool {
        self.edges.len() == 1
    }

    /// Samples on edge `j` (any `j` for radial functions).
    pub fn edge(&self, j: usize) -> &[C64] {
        if self.is_radial() {
            &self.edges[0]
        } else {
            &self.edges[j]
        }
    }

    pub fn stored_edges(&self) -> &[Vec<C64>] {
        &self.edges
    }

    pub fn stored_edges_mut(&mut self) -> &mut [Vec<C64>] {
        &mut self.edges
    }

    /// The single sequence of a radial function.
    pub fn values(&self) -> &[C64] {
        assert!(self.is_radial(), "values() requires a radial function");
        &self.edges[0]
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        assert!(self.is_radial(), "values_mut() requires a radial function");
        &mut self.edges[0]
    }

    pub fn into_values(self) -> Vec<C64> {
        assert!(self.is_radial(), "into_values() requires a radial function");
        self.edges.into_iter().next().unwrap()
    }

    pub fn re(&self) -> Vec<f64> {
        self.values().iter().map(|z| z.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.values().iter().map(|z| z.im).collect()
    }

    /// Copy a radial function onto all N edges explicitly.
    pub fn to_full(&self) -> Self {
        if self.is_radial() {
            Self {
                grid: self.grid,
                edges: vec![self.edges[0].clone(); self.grid.n_edges],
            }
        } else {
            self.clone()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.edges
            .iter()
            .flatten()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64, C64) -> C64) -> Self {
        let grid = self.grid;
        let edges = self
            .edges
            .iter()
            .map(|e| {
                e.iter()
                    .enumerate()
                    .map(|(i, &z)| f(grid.y(i), z))
                    .collect()
            })
            .collect();
        Self { grid, edges }
    }

    /// Pointwise combination; a radial and a full function combine to a full one.
    pub fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self, GraphError> {
        if self.grid != other.grid {
            return Err(GraphError::GridMismatch);
        }
        let n_store = if self.is_radial() && other.is_radial() {
            1
        } else {
            self.grid.n_edges
        };
        let edges = (0..n_store)
            .map(|j| {
                self.edge(j)
                    .iter()
                    .zip(other.edge(j))
                    .map(|(&a, &b)| f(a, b))
                    .collect()
            })
            .collect();
        Ok(Self {
            grid: self.grid,
            edges,
        })
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map(|_, z| z * c)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
            .expect("grid mismatch in add")
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
            .expect("grid mismatch in sub")
    }

    /// Maximum spread of the edge values at the vertex, relative to their size.
    pub fn vertex_spread(&self) -> f64 {
        let v0 = self.edges[0][0];
        let scale = self
            .edges
            .iter()
            .map(|e| e[0].norm())
            .fold(0.0, f64::max)
            .max(1e-300);
        self.edges
            .iter()
            .map(|e| (e[0] - v0).norm())
            .fold(0.0, f64::max)
            / scale
    }

    /// The (edge-averaged) vertex value.
    pub fn vertex_value(&self) -> C64 {
        let sum: C64 = self.edges.iter().map(|e| e[0]).sum();
        sum / self.edges.len() as f64
    }

    /// Check continuity at the vertex.
    pub fn check_continuous(&self) -> Result<(), GraphError> {
        let spread = self.vertex_spread();
        if spread > MATCH_TOL {
            Err(GraphError::VertexMismatch(spread))
        } else {
            Ok(())
        }
    }

    /// Interpolated value on edge `j` at coordinate `y` (zero beyond `L_max`).
    pub fn sample(&self, j: usize, y: f64) -> C64 {
        interpolate(self.edge(j), self.grid.h(), y)
    }
}

/// Six-point Lagrange interpolation of uniformly spaced samples starting at
/// `y = 0`. Stencils are clamped to the sample range, so no reflection is
/// assumed at `y = 0` and kinks at the vertex are not smeared.
pub fn interpolate(values: &[C64], h: f64, y: f64) -> C64 {
    let n = values.len();
    let l = (n - 1) as f64 * h;
    if y > l || y < 0.0 {
        return C64::new(0.0, 0.0);
    }
    let x = y / h;
    let i0 = x.floor() as isize;
    let start = (i0 - 2).clamp(0, n as isize - 6) as usize;
    let t = x - start as f64;
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..6 {
        let mut wk = 1.0;
        for m in 0..6 {
            if m != k {
                wk *= (t - m as f64) / (k as f64 - m as f64);
            }
        }
        acc += values[start + k] * wk;
    }
    acc
}

/// Σ_edges ∫ weight(y)·f_j(y) dy by composite Simpson.
pub fn integrate(f: &GraphFunction, weight: Weight) -> C64 {
    let grid = f.grid();
    let w = grid.simpson_weights();
    let edge_integral = |e: &[C64]| -> C64 {
        e.iter()
            .enumerate()
            .map(|(i, &z)| z * (w[i] * weight.at(grid.y(i))))
            .sum()
    };
    if f.is_radial() {
        edge_integral(f.edge(0)) * grid.n_edges as f64
    } else {
        (0..grid.n_edges).map(|j| edge_integral(f.edge(j))).sum()
    }
}

/// Simpson integral of a real sample sequence on one edge, times the edge count.
pub fn integrate_real(grid: &GraphGrid, values: &[f64]) -> f64 {
    let w = grid.simpson_weights();
    values.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>() * grid.n_edges as f64
}

/// Real `L²` inner product `Re ∫ f ḡ` over the graph.
pub fn inner(f: &GraphFunction, g: &GraphFunction) -> f64 {
    let p = f
        .zip_with(g, |a, b| a * b.conj())
        .expect("grid mismatch in inner");
    integrate(&p, Weight::One).re
}

/// Fourth-order centered-difference derivative of one edge sequence, with
/// fourth-order one-sided stencils at both ends.
pub fn derivative(values: &[C64], h: f64) -> Vec<C64> {
    let n = values.len();
    let f = values;
    let mut d = vec![C64::new(0.0, 0.0); n];
    for i in 2..n - 2 {
        d[i] = (f[i - 2] - f[i + 2] + (f[i + 1] - f[i - 1]) * 8.0) / (12.0 * h);
    }
    let left = |a: usize, s: f64| -> (C64, C64) {
        let g = |k: usize| if s > 0.0 { f[a + k] } else { f[a - k] };
        let d0 = (g(0) * -25.0 + g(1) * 48.0 - g(2) * 36.0 + g(3) * 16.0 - g(4) * 3.0) / (12.0 * h);
        let d1 = (g(0) * -3.0 - g(1) * 10.0 + g(2) * 18.0 - g(3) * 6.0 + g(4)) / (12.0 * h);
        (d0 * s, d1 * s)
    };
    let (d0, d1) = left(0, 1.0);
    d[0] = d0;
    d[1] = d1;
    let (dn, dn1) = left(n - 1, -1.0);
    d[n - 1] = dn;
    d[n - 2] = dn1;
    d
}

/// Edge-wise derivative of a graph function.
pub fn graph_derivative(f: &GraphFunction) -> GraphFunction {
    let h = f.grid().h();
    let edges = f.stored_edges().iter().map(|e| derivative(e, h)).collect();
    GraphFunction {
        grid: *f.grid(),
        edges,
    }
}

/// Norms reported by [`norms`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l2: f64,
    pub h1_seminorm: f64,
    pub l6: f64,
    pub sup: f64,
    pub vertex_abs: f64,
}

pub fn norms(f: &GraphFunction) -> Norms {
    let abs2 = f.map(|_, z| C64::new(z.norm_sqr(), 0.0));
    let abs6 = f.map(|_, z| C64::new(z.norm_sqr().powi(3), 0.0));
    let df = graph_derivative(f);
    let dabs2 = df.map(|_, z| C64::new(z.norm_sqr(), 0.0));
    let sup = f
        .stored_edges()
        .iter()
        .flatten()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let vertex_abs =
        f.stored_edges().iter().map(|e| e[0].norm()).sum::<f64>() / f.stored_edges().len() as f64;
    Norms {
        l2: integrate(&abs2, Weight::One).re.max(0.0).sqrt(),
        h1_seminorm: integrate(&dabs2, Weight::One).re.max(0.0).sqrt(),
        l6: integrate(&abs6, Weight::One).re.max(0.0).powf(1.0 / 6.0),
        sup,
        vertex_abs,
    }
}

/// Lumped inner product `Σ_j Σ_i w_i f_j,i ḡ_j,i` with trapezoid weights; the
/// vertex node carries `h/2` on every edge.
pub fn lumped_inner(f: &GraphFunction, g: &GraphFunction) -> C64 {
    let grid = f.grid();
    let w = grid.lumped_weights();
    let edge = |a: &[C64], b: &[C64]| -> C64 {
        a.iter()
            .zip(b)
            .zip(&w)
            .map(|((x, y), w)| x * y.conj() * *w)
            .sum()
    };
    if f.is_radial() && g.is_radial() {
        edge(f.edge(0), g.edge(0)) * grid.n_edges as f64
    } else {
        (0..grid.n_edges).map(|j| edge(f.edge(j), g.edge(j))).sum()
    }
}

/// Discrete Hamiltonian with the lumped vertex row
/// `(H u)_0 = [Σ_j (u_0 − u_{j,1})/h + γ u_0] / (N h/2)`, standard `−u''`
/// inside, and zero at the Dirichlet endpoint.
pub fn apply_hamiltonian(
    f: &GraphFunction,
    vc: VertexCondition,
) -> Result<GraphFunction, GraphError> {
    f.check_continuous()?;
    let grid = *f.grid();
    let n = grid.n_points;
    let h = grid.h();
    let u0 = f.vertex_value();
    let n_edges = grid.n_edges as f64;
    let flux: C64 = (0..grid.n_edges).map(|j| (u0 - f.edge(j)[1]) / h).sum();
    let vertex = (flux + u0 * vc.gamma) / (n_edges * h / 2.0);
    let edges = f
        .stored_edges()
        .iter()
        .map(|e| {
            let mut out = vec![C64::new(0.0, 0.0); n];
            out[0] = vertex;
            for i in 1..n - 1 {
                out[i] = (e[i] * 2.0 - e[i - 1] - e[i + 1]) / (h * h);
            }
            out
        })
        .collect();
    Ok(GraphFunction { grid, edges })
}

/// Half-line reduction of a radial function.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialReduction {
    pub values: Vec<C64>,
    /// Robin coefficient: `u'(0) = (γ/N) u(0)`.
    pub robin: f64,
}

pub fn radial_reduce(
    f: &GraphFunction,
    vc: VertexCondition,
) -> Result<RadialReduction, GraphError> {
    let n_edges = f.grid().n_edges;
    let robin = vc.gamma / n_edges as f64;
    if f.is_radial() {
        return Ok(RadialReduction {
            values: f.edge(0).to_vec(),
            robin,
        });
    }
    let first = f.edge(0);
    let scale = first
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut spread = 0.0f64;
    for j in 1..n_edges {
        for (a, b) in f.edge(j).iter().zip(first) {
            spread = spread.max((a - b).norm() / scale);
        }
    }
    if spread > MATCH_TOL {
        return Err(GraphError::NotRadial(spread));
    }
    Ok(RadialReduction {
        values: first.to_vec(),
        robin,
    })
}
