//! Linearized operators `L₊ = −∂² + 1 − 5Q⁴` and `L₋ = −∂² + 1 − Q⁴` on
//! radial functions, realized on one edge with the compact fourth-order
//! scheme.
//!
//! The operators are built around the discrete ground state `Q_h`, the
//! solution of `−Δ_c Q_h + Q_h − Q_h⁵ = 0`, so that `L₋Q_h = 0` holds to
//! rounding and the cokernel of `L₋` is exactly `Q_h`. A δ source of graph
//! strength `η` contributes `(η/N) δ_h` on the reduced edge.

use crate::compact::CompactGrid;
use crate::compact::{Bands, VertexLu};
use crate::graph::{derivative, inner, GraphFunction, GraphGrid, C64};
use crate::ground_state::{self, yq_sq_graph};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearizedError {
    #[error("discrete operator is numerically singular (pivot {0})")]
    SingularSystem(usize),
    #[error("right-hand side not in the range of L₋: defect {defect:e} (relative {relative:e})")]
    NotInRange { defect: f64, relative: f64 },
    #[error("ground-state Newton iteration did not converge (residual {0:e})")]
    GroundStateNewton(f64),
    #[error("function must be radial")]
    NotRadial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Plus,
    Minus,
}

/// Relative solvability tolerance for the constrained `L₋` solve.
pub const SOLVABILITY_TOL: f64 = 1e-6;

/// A fixed potential operator `−Δ_c + V` on one edge.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub kind: Kind,
    pub potential: Vec<f64>,
    grid: GraphGrid,
    cg: CompactGrid,
}

impl LinearizedOperator {
    /// Build `L±` around the samples `q` (analytic or discrete ground state).
    pub fn new(kind: Kind, grid: GraphGrid, q: &[f64]) -> Self {
        let c = match kind {
            Kind::Plus => 5.0,
            Kind::Minus => 1.0,
        };
        let potential = q.iter().map(|q| 1.0 - c * q.powi(4)).collect();
        Self {
            kind,
            potential,
            grid,
            cg: CompactGrid::new(grid.n_points, grid.h()),
        }
    }

    pub fn compact(&self) -> &CompactGrid {
        &self.cg
    }

    /// `L u` for real samples; the Dirichlet end is returned as zero.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.cg.apply(&self.potential, 0.0, u)
    }

    pub fn apply_fn(&self, u: &GraphFunction) -> GraphFunction {
        let re = self.apply(&u.re());
        let im = self.apply(&u.im());
        GraphFunction::radial(
            self.grid,
            re.iter().zip(&im).map(|(&a, &b)| C64::new(a, b)).collect(),
        )
    }
}

/// Solvers built on the discrete ground state.
#[derive(Debug, Clone)]
pub struct Linearized {
    grid: GraphGrid,
    cg: CompactGrid,
    q_h: Vec<f64>,
    plus: LinearizedOperator,
    minus: LinearizedOperator,
    plus_lu: VertexLu<f64>,
    minus_pinned_lu: VertexLu<f64>,
    rho: Vec<f64>,
    /// Left null vector of the discrete `L₋` mapped to a quadrature pairing
    /// (`≈ w_i Q_h(y_i)`), and its vertex-source weight (`≈ Q_h(0)`).
    coker_weights: Vec<f64>,
    coker_vertex: f64,
    /// Sup of the discrete ground-state equation residual.
    pub ground_residual: f64,
    /// Sup of `Q_h − Q` (discretization error of the ground state).
    pub ground_deviation: f64,
}

impl Linearized {
    pub fn new(grid: GraphGrid) -> Result<Self, LinearizedError> {
        let cg = CompactGrid::new(grid.n_points, grid.h());
        let (q_h, ground_residual) = discrete_ground_state(&cg)?;
        let ground_deviation = (0..grid.n_points)
            .map(|i| (q_h[i] - ground_state::q(grid.y(i))).abs())
            .fold(0.0, f64::max);
        let plus = LinearizedOperator::new(Kind::Plus, grid, &q_h);
        let minus = LinearizedOperator::new(Kind::Minus, grid, &q_h);
        let plus_lu = cg
            .a_bands(&plus.potential, 0.0)
            .factor()
            .map_err(|e| LinearizedError::SingularSystem(e.0))?;
        let a = cg.a_bands(&minus.potential, 0.0);
        let pinned = Bands {
            dl: a.dl[1..].to_vec(),
            d: a.d[1..].to_vec(),
            du: a.du[1..].to_vec(),
            e02: 0.0,
        };
        let minus_pinned_lu = pinned
            .factor()
            .map_err(|e| LinearizedError::SingularSystem(e.0 + 1))?;
        let (coker_weights, coker_vertex) = cokernel(&cg, &a, &q_h)?;
        let mut lin = Self {
            grid,
            cg,
            q_h,
            plus,
            minus,
            plus_lu,
            minus_pinned_lu,
            rho: Vec::new(),
            coker_weights,
            coker_vertex,
            ground_residual,
            ground_deviation,
        };
        let y2q: Vec<f64> = (0..grid.n_points)
            .map(|i| grid.y(i).powi(2) * lin.q_h[i])
            .collect();
        lin.rho = lin.solve_plus_real(&y2q, 0.0);
        Ok(lin)
    }

    pub fn grid(&self) -> GraphGrid {
        self.grid
    }

    pub fn compact(&self) -> &CompactGrid {
        &self.cg
    }

    /// The discrete ground state `Q_h`.
    pub fn q(&self) -> &[f64] {
        &self.q_h
    }

    pub fn q_fn(&self) -> GraphFunction {
        GraphFunction::radial_real(self.grid, &self.q_h)
    }

    /// `ρ` with `L₊ρ = y²Q_h`, Neumann at the vertex.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn rho_fn(&self) -> GraphFunction {
        GraphFunction::radial_real(self.grid, &self.rho)
    }

    pub fn plus(&self) -> &LinearizedOperator {
        &self.plus
    }

    pub fn minus(&self) -> &LinearizedOperator {
        &self.minus
    }

    fn per_edge(&self, eta: f64) -> f64 {
        eta / self.grid.n_edges as f64
    }

    /// Solve `L₊u = g + ηδ` for real samples.
    pub fn solve_plus_real(&self, g: &[f64], eta: f64) -> Vec<f64> {
        self.cg.solve_with(&self.plus_lu, g, self.per_edge(eta))
    }

    /// Solvability defect of `L₋u = g + ηδ`: the discrete analogue of
    /// `⟨g, Q⟩_𝓖 + η Q(0)`, exact for the discrete operator.
    pub fn minus_defect(&self, g: &[f64], eta: f64) -> f64 {
        let m = self.cg.m();
        let s: f64 = (0..m).map(|i| self.coker_weights[i] * g[i]).sum();
        self.grid.n_edges as f64 * s + eta * self.coker_vertex
    }

    /// Quadrature weights of the discrete cokernel pairing on one edge.
    pub fn cokernel_weights(&self) -> &[f64] {
        &self.coker_weights
    }

    /// Weight of a unit vertex source in the cokernel pairing.
    pub fn cokernel_vertex(&self) -> f64 {
        self.coker_vertex
    }

    /// Solve `L₋u = g + ηδ` with `(u, Q_h) = 0`.
    pub fn solve_minus_real(&self, g: &[f64], eta: f64) -> Result<Vec<f64>, LinearizedError> {
        let defect = self.minus_defect(g, eta);
        let gnorm = (self.grid.n_edges as f64 * self.cg.dot(g, g)).sqrt();
        let qnorm = (self.grid.n_edges as f64 * self.cg.dot(&self.q_h, &self.q_h)).sqrt();
        let scale = gnorm * qnorm + eta.abs() * self.q_h[0];
        let relative = if scale > 0.0 {
            defect.abs() / scale
        } else {
            0.0
        };
        if relative > SOLVABILITY_TOL {
            return Err(LinearizedError::NotInRange { defect, relative });
        }
        let r = self.cg.rhs(g, self.per_edge(eta));
        let mut tail = r[1..].to_vec();
        self.minus_pinned_lu.solve_in_place(&mut tail);
        let mut u = Vec::with_capacity(self.grid.n_points);
        u.push(0.0);
        u.extend(tail);
        u.push(0.0);
        let qf = self.q_fn();
        let uf = GraphFunction::radial_real(self.grid, &u);
        let c = inner(&uf, &qf) / inner(&qf, &qf);
        for (ui, qi) in u.iter_mut().zip(&self.q_h) {
            *ui -= c * qi;
        }
        Ok(u)
    }

    pub fn solve_plus(
        &self,
        g: &GraphFunction,
        eta: f64,
    ) -> Result<GraphFunction, LinearizedError> {
        if !g.is_radial() {
            return Err(LinearizedError::NotRadial);
        }
        let re = self.solve_plus_real(&g.re(), eta);
        let im = self.solve_plus_real(&g.im(), 0.0);
        Ok(GraphFunction::radial(
            self.grid,
            re.iter().zip(&im).map(|(&a, &b)| C64::new(a, b)).collect(),
        ))
    }

    pub fn solve_minus_constrained(
        &self,
        g: &GraphFunction,
        eta: f64,
    ) -> Result<GraphFunction, LinearizedError> {
        if !g.is_radial() {
            return Err(LinearizedError::NotRadial);
        }
        let re = self.solve_minus_real(&g.re(), eta)?;
        let im = self.solve_minus_real(&g.im(), 0.0)?;
        Ok(GraphFunction::radial(
            self.grid,
            re.iter().zip(&im).map(|(&a, &b)| C64::new(a, b)).collect(),
        ))
    }

    /// Lowest eigenpair of `L₊` by shifted inverse iteration.
    pub fn lowest_plus_eigen(&self, shift: f64) -> Result<(f64, Vec<f64>), LinearizedError> {
        let shifted: Vec<f64> = self.plus.potential.iter().map(|v| v - shift).collect();
        let lu = self
            .cg
            .a_bands(&shifted, 0.0)
            .factor()
            .map_err(|e| LinearizedError::SingularSystem(e.0))?;
        let mut x: Vec<f64> = self.q_h.iter().map(|q| q.powi(2)).collect();
        for _ in 0..60 {
            let mut next = self.cg.solve_with(&lu, &x, 0.0);
            let nrm = self.cg.dot(&next, &next).sqrt();
            next.iter_mut().for_each(|v| *v /= nrm);
            x = next;
        }
        let tx = self.plus.apply(&x);
        let mu = self.cg.dot(&tx, &x) / self.cg.dot(&x, &x);
        Ok((mu, x))
    }

    /// Quadratic forms `⟨L₋v,v⟩` on `{ρ}^⊥` and `⟨L₊v,v⟩` on `{Q, y²Q}^⊥`.
    pub fn positivity_probe(&self, v: &[f64]) -> PositivityReport {
        let n_edges = self.grid.n_edges as f64;
        let dot = |a: &[f64], b: &[f64]| n_edges * self.cg.dot(a, b);
        let mut vm = v.to_vec();
        let c = dot(&vm, &self.rho) / dot(&self.rho, &self.rho);
        vm.iter_mut().zip(&self.rho).for_each(|(a, r)| *a -= c * r);
        let y2q: Vec<f64> = (0..self.grid.n_points)
            .map(|i| self.grid.y(i).powi(2) * self.q_h[i])
            .collect();
        let basis = [self.q_h.clone(), y2q];
        let g = [
            [dot(&basis[0], &basis[0]), dot(&basis[0], &basis[1])],
            [dot(&basis[1], &basis[0]), dot(&basis[1], &basis[1])],
        ];
        let r = [dot(v, &basis[0]), dot(v, &basis[1])];
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        let a0 = (r[0] * g[1][1] - r[1] * g[0][1]) / det;
        let a1 = (g[0][0] * r[1] - g[1][0] * r[0]) / det;
        let vp: Vec<f64> = v
            .iter()
            .zip(&basis[0])
            .zip(&basis[1])
            .map(|((x, b0), b1)| x - a0 * b0 - a1 * b1)
            .collect();
        let quad_minus = dot(&self.minus.apply(&vm), &vm);
        let quad_plus = dot(&self.plus.apply(&vp), &vp);
        let dv: Vec<f64> = derivative(
            &v.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>(),
            self.grid.h(),
        )
        .iter()
        .map(|z| z.re)
        .collect();
        let h1_sq = dot(v, v) + dot(&dv, &dv);
        PositivityReport {
            quad_minus,
            quad_plus,
            h1_sq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub quad_minus: f64,
    pub quad_plus: f64,
    pub h1_sq: f64,
}

/// Left null vector `z` of `A` (from the pinned transposed system with
/// `z_0 = 1`), returned as the pairing weights `Bᵀz` and vertex weight
/// `2z_0/h`, scaled so that the weights approximate `w_i q_i`.
fn cokernel(
    cg: &CompactGrid,
    a: &Bands<f64>,
    q: &[f64],
) -> Result<(Vec<f64>, f64), LinearizedError> {
    let m = cg.m();
    let t = Bands {
        dl: a.du[1..].to_vec(),
        d: a.d[1..].to_vec(),
        du: a.dl[1..].to_vec(),
        e02: 0.0,
    };
    let lu = t
        .factor()
        .map_err(|e| LinearizedError::SingularSystem(e.0 + 1))?;
    let mut rhs = vec![0.0; m - 1];
    rhs[0] = -a.du[0];
    rhs[1] = -a.e02;
    lu.solve_in_place(&mut rhs);
    let mut z = Vec::with_capacity(m);
    z.push(1.0);
    z.extend(rhs);
    let b = cg.b_bands();
    let bt = Bands {
        dl: b.du.clone(),
        d: b.d.clone(),
        du: b.dl.clone(),
        e02: 0.0,
    };
    let mut y = bt.matvec(&z);
    let w = cg.weights();
    let target: f64 = (0..m).map(|i| w[i] * q[i] * q[i]).sum();
    let got: f64 = (0..m).map(|i| y[i] * q[i]).sum();
    let c = target / got;
    y.iter_mut().for_each(|v| *v *= c);
    y.push(0.0);
    Ok((y, c * 2.0 / cg.h()))
}

/// Newton solve of `−D2 q/h² + B(q − q⁵) = 0` starting from the analytic `Q`.
fn discrete_ground_state(cg: &CompactGrid) -> Result<(Vec<f64>, f64), LinearizedError> {
    let n = cg.len();
    let h = cg.h();
    let mut q: Vec<f64> = (0..n).map(|i| ground_state::q(i as f64 * h)).collect();
    q[n - 1] = 0.0;
    let residual = |q: &[f64]| -> Vec<f64> {
        let v: Vec<f64> = q.iter().map(|q| 1.0 - q.powi(4)).collect();
        cg.a_bands(&v, 0.0).matvec(q)
    };
    let scale = 1.0 / (h * h);
    let mut res_norm = f64::INFINITY;
    for _ in 0..30 {
        let r = residual(&q);
        res_norm = r.iter().fold(0.0f64, |a, b| a.max(b.abs())) / scale;
        if res_norm < 1e-14 {
            break;
        }
        let jv: Vec<f64> = q.iter().map(|q| 1.0 - 5.0 * q.powi(4)).collect();
        let lu = cg
            .a_bands(&jv, 0.0)
            .factor()
            .map_err(|e| LinearizedError::SingularSystem(e.0))?;
        let mut dq = r;
        lu.solve_in_place(&mut dq);
        for i in 0..n - 1 {
            q[i] -= dq[i];
        }
    }
    // residual of the pointwise equation −Δ_c q + q − q⁵
    let v: Vec<f64> = vec![1.0; n];
    let t = cg.apply(&v, 0.0, &q);
    let ode_res = (0..n - 1)
        .map(|i| (t[i] - q[i].powi(5)).abs())
        .fold(0.0, f64::max);
    if !(ode_res < 1e-9) {
        return Err(LinearizedError::GroundStateNewton(res_norm));
    }
    Ok((q, ode_res))
}

/// Relative `L²` defect of `lhs − rhs` on `y ≤ L_max/2`.
pub fn relative_defect(grid: &GraphGrid, lhs: &[f64], rhs: &[f64]) -> f64 {
    let cut = (grid.n_points - 1) / 2;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=cut {
        num += (lhs[i] - rhs[i]).powi(2);
        den += rhs[i].powi(2);
    }
    (num / den).sqrt()
}

/// One line of the identity report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityLine {
    pub name: String,
    pub defect: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub n_edges: usize,
    pub n_points: usize,
    pub h: f64,
    pub lines: Vec<IdentityLine>,
    pub max_defect: f64,
    pub all_pass: bool,
}

/// Integral identities and the kernel chain, each as a relative defect.
pub fn identity_suite(
    tables: &ground_state::GroundStateTables,
    lin: &Linearized,
    tol: f64,
) -> IdentityReport {
    let grid = *tables.q.grid();
    let q = tables.q.re();
    let lq = tables.lambda_q.re();
    let y2q = tables.y2q.re();
    let plus = LinearizedOperator::new(Kind::Plus, grid, &q);
    let minus = LinearizedOperator::new(Kind::Minus, grid, &q);
    let (qlq, y2qlq, y2qq) = ground_state::integral_identities(tables);
    let qq = inner(&tables.q, &tables.q);
    let mut lines = Vec::new();
    let mut push = |name: &str, defect: f64| {
        lines.push(IdentityLine {
            name: name.to_string(),
            defect,
            tolerance: tol,
            pass: defect <= tol,
        })
    };
    push("int Q LQ = 0", qlq.abs() / qq);
    push("int y2 Q LQ = -int y2 Q2", (y2qlq + y2qq).abs() / y2qq);
    let rho_q = inner(&lin.rho_fn(), &lin.q_fn());
    push(
        "(rho, Q) = |yQ|^2/2",
        (rho_q / (0.5 * yq_sq_graph(grid.n_edges)) - 1.0).abs(),
    );
    let lmq = minus.apply(&q);
    let cut = (grid.n_points - 1) / 2;
    let lmq_rel = (0..=cut).map(|i| lmq[i].powi(2)).sum::<f64>().sqrt()
        / (0..=cut).map(|i| q[i].powi(2)).sum::<f64>().sqrt();
    push("L- Q = 0", lmq_rel);
    let target: Vec<f64> = q.iter().map(|v| -2.0 * v).collect();
    push(
        "L+ LQ = -2Q",
        relative_defect(&grid, &plus.apply(&lq), &target),
    );
    let target: Vec<f64> = lq.iter().map(|v| -4.0 * v).collect();
    push(
        "L- y2Q = -4 LQ",
        relative_defect(&grid, &minus.apply(&y2q), &target),
    );
    let y2qh: Vec<f64> = (0..grid.n_points)
        .map(|i| grid.y(i).powi(2) * lin.q()[i])
        .collect();
    push(
        "L+ rho = y2Q",
        relative_defect(&grid, &lin.plus().apply(lin.rho()), &y2qh),
    );
    let max_defect = lines.iter().map(|l| l.defect).fold(0.0, f64::max);
    let all_pass = lines.iter().all(|l| l.pass);
    IdentityReport {
        n_edges: grid.n_edges,
        n_points: grid.n_points,
        h: grid.h(),
        lines,
        max_defect,
        all_pass,
    }
}

/// `sup_{y ≥ 10} e^{y/2}(|u|+|u'|)` divided by its value at `y = 10`.
pub fn decay_proxy(grid: &GraphGrid, u: &[f64]) -> f64 {
    let du = derivative(
        &u.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>(),
        grid.h(),
    );
    let i10 = (10.0 / grid.h()).round() as usize;
    let at = |i: usize| (grid.y(i) / 2.0).exp() * (u[i].abs() + du[i].re.abs());
    let base = at(i10);
    (i10..grid.n_points).map(at).fold(0.0, f64::max) / base
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::inner;
    use crate::ground_state::build_tables;
    use std::sync::OnceLock;

    fn lin2() -> &'static Linearized {
        static L: OnceLock<Linearized> = OnceLock::new();
        L.get_or_init(|| Linearized::new(GraphGrid::standard(2).unwrap()).unwrap())
    }

    #[test]
    fn discrete_ground_state_is_close_to_closed_form() {
        let lin = lin2();
        assert!(lin.ground_deviation < 1e-7, "{}", lin.ground_deviation);
        assert!(lin.ground_residual < 1e-9);
    }

    #[test]
    fn solve_plus_reproduces_lambda_q() {
        let lin = lin2();
        let grid = lin.grid();
        let g: Vec<f64> = (0..grid.n_points)
            .map(|i| -2.0 * ground_state::q(grid.y(i)))
            .collect();
        let u = lin.solve_plus_real(&g, 0.0);
        let err = (0..grid.n_points)
            .map(|i| (u[i] - ground_state::lambda_q(grid.y(i))).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        let back = lin.plus().apply(&u);
        let res = relative_defect(&grid, &back, &g);
        assert!(res < 1e-9, "{res}");
        let zero = lin.solve_plus_real(&vec![0.0; grid.n_points], 0.0);
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rho_pairing_with_q() {
        let lin = lin2();
        let r = inner(&lin.rho_fn(), &lin.q_fn()) / (0.5 * yq_sq_graph(2));
        assert!((r - 1.0).abs() < 1e-6, "{r}");
    }

    #[test]
    fn constrained_minus_solve() {
        let lin = lin2();
        let grid = lin.grid();
        let g: Vec<f64> = (0..grid.n_points)
            .map(|i| -4.0 * ground_state::lambda_q(grid.y(i)))
            .collect();
        let u = lin.solve_minus_real(&g, 0.0).unwrap();
        let uf = GraphFunction::radial_real(grid, &u);
        let qf = lin.q_fn();
        let orth = inner(&uf, &qf).abs() / (inner(&uf, &uf).sqrt() * inner(&qf, &qf).sqrt());
        assert!(orth <= 1e-10, "{orth}");
        // u = y²Q − cQ
        let y2q: Vec<f64> = (0..grid.n_points)
            .map(|i| grid.y(i).powi(2) * ground_state::q(grid.y(i)))
            .collect();
        let y2qf = GraphFunction::radial_real(grid, &y2q);
        let c = inner(&y2qf, &qf) / inner(&qf, &qf);
        // the Dirichlet end truncates y²Q at the 1e-6 level, so compare on y ≤ L/2
        let err = (0..grid.n_points / 2)
            .map(|i| (u[i] - (y2q[i] - c * lin.q()[i])).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-7, "{err}");
        let q = lin.q().to_vec();
        match lin.solve_minus_real(&q, 0.0) {
            Err(LinearizedError::NotInRange { defect, .. }) => {
                let qq = 2.0 * lin.compact().dot(&q, &q);
                assert!((defect / qq - 1.0).abs() < 1e-12);
            }
            other => panic!("expected NotInRange, got {other:?}"),
        }
        let zero = lin
            .solve_minus_real(&vec![0.0; grid.n_points], 0.0)
            .unwrap();
        assert!(zero.iter().all(|v| v.abs() < 1e-300));
    }

    #[test]
    fn delta_source_is_a_vertex_flux() {
        // L₊u = ηδ: away from the vertex u solves the homogeneous equation and
        // the jump condition gives −N u'(0⁺) = η.
        let lin = lin2();
        let grid = lin.grid();
        let eta = 0.7;
        let u = lin.solve_plus_real(&vec![0.0; grid.n_points], eta);
        let h = grid.h();
        let slope =
            (-25.0 * u[0] + 48.0 * u[1] - 36.0 * u[2] + 16.0 * u[3] - 3.0 * u[4]) / (12.0 * h);
        assert!(
            (-(grid.n_edges as f64) * slope - eta).abs() < 1e-4,
            "{slope}"
        );
    }

    #[test]
    fn cokernel_pairing_approximates_lumped_quadrature() {
        let lin = lin2();
        let grid = lin.grid();
        assert!(
            (lin.cokernel_vertex() / lin.q()[0] - 1.0).abs() < 1e-8,
            "{}",
            lin.cokernel_vertex()
        );
        let f: Vec<f64> = (0..grid.n_points)
            .map(|i| (-(grid.y(i) - 1.0).powi(2)).exp())
            .collect();
        let exact = crate::graph::integrate_real(
            &grid,
            &(0..grid.n_points)
                .map(|i| f[i] * lin.q()[i])
                .collect::<Vec<_>>(),
        ) / grid.n_edges as f64;
        let paired: f64 = (0..grid.n_points)
            .map(|i| lin.cokernel_weights()[i] * f[i])
            .sum();
        assert!((paired / exact - 1.0).abs() < 1e-8, "{paired} vs {exact}");
        let lmq = lin.minus().apply(lin.q());
        let d = lin.minus_defect(&lmq, 0.0).abs();
        assert!(d < 1e-10, "{d}");
    }

    #[test]
    fn lowest_eigenvalue_of_l_plus() {
        let lin = lin2();
        let (mu, x) = lin.lowest_plus_eigen(-7.5).unwrap();
        assert!((mu + 8.0).abs() < 0.05, "{mu}");
        let q3: Vec<f64> = lin.q().iter().map(|q| q.powi(3)).collect();
        let cg = lin.compact();
        let corr = cg.dot(&x, &q3).abs() / (cg.dot(&x, &x) * cg.dot(&q3, &q3)).sqrt();
        assert!(corr > 0.999, "{corr}");
    }

    #[test]
    fn identity_suite_passes_on_default_grid() {
        let grid = GraphGrid::standard(2).unwrap();
        let rep = identity_suite(&build_tables(grid), lin2(), 1e-6);
        assert!(rep.all_pass, "{rep:#?}");
        assert_eq!(rep.lines.len(), 7);
    }

    #[test]
    fn solutions_decay() {
        let lin = lin2();
        let grid = lin.grid();
        assert!(decay_proxy(&grid, lin.rho()) <= 10.0);
        let g: Vec<f64> = (0..grid.n_points)
            .map(|i| -4.0 * ground_state::lambda_q(grid.y(i)))
            .collect();
        let u = lin.solve_minus_real(&g, 0.0).unwrap();
        assert!(decay_proxy(&grid, &u) <= 10.0);
    }

    #[test]
    fn positivity() {
        let lin = lin2();
        let rep = lin.positivity_probe(lin.q());
        assert!(rep.quad_minus >= -1e-8 * rep.h1_sq);
        let zero = lin.positivity_probe(&vec![0.0; lin.grid().n_points]);
        assert_eq!((zero.quad_minus, zero.quad_plus), (0.0, 0.0));
    }
}
