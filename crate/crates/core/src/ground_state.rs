//! The line ground state `Q(y) = 3^{1/4} sech^{1/2}(2y)`, its dilation
//! derivative `ΛQ = Q/2 + yQ'`, closed-form constants, the pseudo-conformal
//! solution and Gagliardo–Nirenberg ratios.

use crate::graph::{
    apply_hamiltonian, integrate, norms, GraphError, GraphFunction, GraphGrid, VertexCondition,
    Weight, C64,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundStateError {
    #[error("pseudo-conformal time must be negative, got {0}")]
    TimeNonNegative(f64),
    #[error("function is not continuous at the vertex")]
    NotContinuousAtVertex,
    #[error("radial variant requires a radial function")]
    NotRadial,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// `Q(0) = 3^{1/4}`.
pub fn q0() -> f64 {
    3f64.powf(0.25)
}

pub fn q(y: f64) -> f64 {
    q0() / (2.0 * y).cosh().sqrt()
}

pub fn q_prime(y: f64) -> f64 {
    -q(y) * (2.0 * y).tanh()
}

/// `ΛQ = Q/2 + yQ'`.
pub fn lambda_q(y: f64) -> f64 {
    q(y) * (0.5 - y * (2.0 * y).tanh())
}

/// `M_ℝ(Q) = ½‖Q‖²_{L²(ℝ)} = π√3/4`.
pub fn mass_line() -> f64 {
    PI * 3f64.sqrt() / 4.0
}

/// `‖Q‖²_{L²(ℝ)} = π√3/2`.
pub fn q_norm_sq_line() -> f64 {
    PI * 3f64.sqrt() / 2.0
}

/// `‖yQ‖²_{L²(ℝ)} = √3 π³/32`.
pub fn yq_sq_line() -> f64 {
    3f64.sqrt() * PI.powi(3) / 32.0
}

/// `‖yQ‖²` over an N-edge graph (N half-lines).
pub fn yq_sq_graph(n_edges: usize) -> f64 {
    n_edges as f64 / 2.0 * yq_sq_line()
}

/// `‖Q'‖²_{L²(ℝ)} = π√3/4`.
pub fn dq_sq_line() -> f64 {
    PI * 3f64.sqrt() / 4.0
}

/// `C_Q = ‖yQ‖²/8` on the graph.
pub fn c_q(n_edges: usize) -> f64 {
    yq_sq_graph(n_edges) / 8.0
}

/// `β = α_{0,1} = −2γQ(0)²/‖yQ‖²` on the graph, i.e. `−128γ/(Nπ³)`.
pub fn beta(gamma: f64, n_edges: usize) -> f64 {
    -2.0 * gamma * q0() * q0() / yq_sq_graph(n_edges)
}

/// Mass threshold for global existence on `‖u₀‖²_{L²}`: `min{N/2, 1}‖Q‖²_{L²(ℝ)}`.
pub fn mass_threshold(n_edges: usize) -> f64 {
    (n_edges as f64 / 2.0).min(1.0) * q_norm_sq_line()
}

/// Closed forms sampled on a grid, with derived constants.
#[derive(Debug, Clone)]
pub struct GroundStateTables {
    pub q: GraphFunction,
    pub dq: GraphFunction,
    pub lambda_q: GraphFunction,
    pub y2q: GraphFunction,
    pub mass_line: f64,
    pub q0: f64,
    pub yq_sq_line: f64,
    pub yq_sq_graph: f64,
    /// `sup |−Q'' + Q − Q⁵|` with the discrete Hamiltonian.
    pub residual: f64,
}

pub fn build_tables(grid: GraphGrid) -> GroundStateTables {
    let qf = GraphFunction::from_real_fn(grid, q);
    let hq =
        apply_hamiltonian(&qf, VertexCondition { gamma: 0.0 }).expect("radial Q is continuous");
    let residual = hq
        .values()
        .iter()
        .zip(qf.values())
        .map(|(hq, q)| (hq + q - q.powi(5)).norm())
        .fold(0.0, f64::max);
    GroundStateTables {
        dq: GraphFunction::from_real_fn(grid, q_prime),
        lambda_q: GraphFunction::from_real_fn(grid, lambda_q),
        y2q: GraphFunction::from_real_fn(grid, |y| y * y * q(y)),
        q: qf,
        mass_line: mass_line(),
        q0: q0(),
        yq_sq_line: yq_sq_line(),
        yq_sq_graph: yq_sq_graph(grid.n_edges),
        residual,
    }
}

/// `S(t,x) = |t|^{−1/2} Q(x/|t|) e^{−ix²/(4|t|)} e^{i/|t|}` copied onto every edge.
///
/// The constant phase rotates forward like the standing wave `e^{it}Q`, so it
/// is `+1/|t|`; with `e^{i/t}` the function is not a solution.
pub fn pseudo_conformal(t: f64, grid: GraphGrid) -> Result<GraphFunction, GroundStateError> {
    if t >= 0.0 || !t.is_finite() {
        return Err(GroundStateError::TimeNonNegative(t));
    }
    let a = t.abs();
    Ok(GraphFunction::from_fn(grid, |x| {
        C64::from_polar(q(x / a) / a.sqrt(), -x * x / (4.0 * a) + 1.0 / a)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnVariant {
    Full,
    Radial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// `‖u‖⁶_{L⁶} / (C‖u_x‖²‖u‖⁴)` with the sharp full or radial constant.
pub fn gn_check(u: &GraphFunction, variant: GnVariant) -> Result<GnReport, GroundStateError> {
    if u.check_continuous().is_err() {
        return Err(GroundStateError::NotContinuousAtVertex);
    }
    if variant == GnVariant::Radial && !u.is_radial() {
        return Err(GroundStateError::NotRadial);
    }
    let n = u.grid().n_edges as f64;
    let qn4 = q_norm_sq_line().powi(2);
    let c = match variant {
        GnVariant::Full => 3.0 / qn4,
        GnVariant::Radial => 12.0 / (n * n * qn4),
    };
    let nr = norms(u);
    let lhs = nr.l6.powi(6);
    let rhs = c * nr.h1_seminorm.powi(2) * nr.l2.powi(4);
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(GnReport { lhs, rhs, ratio })
}

/// Randomized radial test functions: sums of 1–4 shifted gaussians with
/// random complex amplitudes, centres in `[0, 4]` and widths in `[0.3, 2]`.
pub fn gn_corpus(grid: GraphGrid, count: usize, seed: u64) -> Vec<GraphFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let terms: Vec<(C64, f64, f64)> = (0..rng.gen_range(1..=4))
                .map(|_| {
                    let amp = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    (amp, rng.gen_range(0.0..4.0), rng.gen_range(0.3..2.0))
                })
                .collect();
            GraphFunction::from_fn(grid, |y| {
                terms
                    .iter()
                    .map(|&(a, c, w)| a * (-((y - c) / w).powi(2)).exp())
                    .sum()
            })
        })
        .collect()
}

/// `∫ Q ΛQ`, `∫ y²QΛQ`, `∫ y²Q²` on the graph.
pub fn integral_identities(t: &GroundStateTables) -> (f64, f64, f64) {
    let qlq = t.q.zip_with(&t.lambda_q, |a, b| a * b).unwrap();
    let qq = t.q.zip_with(&t.q, |a, b| a * b).unwrap();
    (
        integrate(&qlq, Weight::One).re,
        integrate(&qlq, Weight::Y2).re,
        integrate(&qq, Weight::Y2).re,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> GraphGrid {
        GraphGrid::standard(n).unwrap()
    }

    #[test]
    fn vertex_values() {
        assert!((q(0.0) - 1.3160740).abs() < 1e-7);
        assert!((lambda_q(0.0) - 0.6580370).abs() < 1e-7);
        assert!(q_prime(0.0).abs() < 1e-15);
    }

    #[test]
    fn graph_mass_and_moment() {
        let t = build_tables(grid(2));
        let qq = t.q.zip_with(&t.q, |a, b| a * b).unwrap();
        let m = integrate(&qq, Weight::One).re;
        assert!((m - 2.7206990).abs() < 1e-7);
        assert!((m / 2.0 / mass_line() - 1.0).abs() < 1e-8);
        let ym = integrate(&qq, Weight::Y2).re;
        // independent high-precision quadrature of √3∫y²sech(2y)dy over ℝ
        assert!((ym - 1.678_263_955_119_292).abs() < 1e-9, "{ym}");
        assert!((ym / yq_sq_graph(2) - 1.0).abs() < 1e-9);
        for n in [3, 5] {
            let t = build_tables(grid(n));
            let qq = t.q.zip_with(&t.q, |a, b| a * b).unwrap();
            let m = integrate(&qq, Weight::One).re / 2.0;
            assert!((m / (n as f64 / 2.0 * mass_line()) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn constants() {
        assert!((c_q(2) - 0.209_782_994_389_911_5).abs() < 1e-12);
        assert!((beta(-1.0, 2) - 64.0 / PI.powi(3)).abs() < 1e-12);
        assert!((beta(-1.0, 2) - 2.0641).abs() < 1e-4);
        assert!((dq_sq_line() - 3f64.sqrt() * PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn ground_state_residual_is_second_order() {
        let r1 = build_tables(GraphGrid::new(2, 20.0, 1001).unwrap()).residual;
        let r2 = build_tables(GraphGrid::new(2, 20.0, 2001).unwrap()).residual;
        let t = build_tables(grid(2));
        let h = t.q.grid().h();
        assert!(t.residual <= 5.0 * h * h + 1e-8, "{}", t.residual);
        let order = (r1 / r2).log2();
        assert!((order - 2.0).abs() < 0.1, "{order}");
    }

    #[test]
    fn integral_identities_hold() {
        let t = build_tables(grid(2));
        let (a, b, c) = integral_identities(&t);
        assert!(a.abs() <= 1e-8);
        assert!((b + c).abs() <= 1e-6);
        // ∫y²QΛQ = (1/2 − (μ+1)/(r+1)) ∫y²Q² at (μ, r) = (2, 1)
        assert!((b - (0.5 - 1.5) * c).abs() <= 1e-6 * c);
    }

    #[test]
    fn pseudo_conformal_profile() {
        let g = GraphGrid::new(2, 20.0, 8001).unwrap();
        assert!(matches!(
            pseudo_conformal(0.0, g),
            Err(GroundStateError::TimeNonNegative(_))
        ));
        let s = pseudo_conformal(-1.0, g).unwrap();
        for (i, z) in s.values().iter().enumerate().step_by(97) {
            assert!((z.norm() - q(g.y(i))).abs() < 1e-14);
        }
        for t in [-1.0, -0.5, -0.2] {
            let n = norms(&pseudo_conformal(t, g).unwrap());
            assert!((n.l2 * n.l2 / q_norm_sq_line() - 1.0).abs() < 1e-8);
        }
        let t = -0.02;
        let n = norms(&pseudo_conformal(t, g).unwrap());
        let ratio = t.abs() * n.h1_seminorm / dq_sq_line().sqrt();
        assert!((ratio - 1.0).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn gn_ratios() {
        let g2 = grid(2);
        let t = build_tables(g2);
        let r = gn_check(&t.q, GnVariant::Radial).unwrap();
        assert!(r.ratio <= 1.0 + 1e-6, "{}", r.ratio);
        assert!((r.ratio - 1.0).abs() < 1e-6);
        let g3 = grid(3);
        let bump = GraphFunction::from_real_fn(g3, |y| (-y * y).exp());
        assert!(gn_check(&bump, GnVariant::Radial).unwrap().ratio < 1.0);
        assert!(gn_check(&bump, GnVariant::Full).unwrap().ratio < 1.0);
        assert_eq!(
            gn_check(&GraphFunction::zeros(g3), GnVariant::Full)
                .unwrap()
                .ratio,
            0.0
        );
        let full = bump.to_full();
        assert_eq!(
            gn_check(&full, GnVariant::Radial),
            Err(GroundStateError::NotRadial)
        );
    }

    #[test]
    fn gn_corpus_is_reproducible() {
        let g = GraphGrid::new(3, 20.0, 801).unwrap();
        let a = gn_corpus(g, 3, 11);
        let b = gn_corpus(g, 3, 11);
        assert_eq!(a, b);
    }
}
