//! Time integration of `i u_t − H_γ u + |u|⁴u = 0` on the star graph.
//!
//! Lab frame: second-order differences with the lumped vertex row, which is
//! self-adjoint for the lumped (trapezoid) inner product, so Crank–Nicolson
//! preserves the lumped mass exactly. Two schemes are available: Strang
//! splitting with exact phase rotations for the nonlinearity, and the
//! Crank–Nicolson relaxation scheme with `φ^{n+1/2} = 2|u^n|⁴ − φ^{n−1/2}`.
//! A third, fully implicit Crank–Nicolson scheme conserves the discrete
//! energy as well.
//!
//! Rescaled frame: with `u = λ^{−1/2} e^{iθ} e^{−iby²/4} v(s, x/λ)` and a frame
//! that follows `b_s = α − b²`, `λ_s = −bλ`, `θ_s = 1`, the rest of the
//! equation is `i v_s = H_{λγ} v + v − |v|⁴v − α (y²/4) v`. A step is the
//! implicit Crank–Nicolson step of the conservative scheme with the compact
//! fourth-order radial operator, which keeps the discrete ground state
//! stationary, followed by re-projection of the parameters with the
//! modulation decomposition.

use crate::compact::CompactGrid;
use crate::fit::{line_fit, FitError};
use crate::graph::{
    apply_hamiltonian, derivative, integrate_real, GraphError, GraphFunction, GraphGrid,
    VertexCondition, C64,
};
use crate::modulation::{
    decompose_in_frame, mod_vector, synthesize, DecomposeOptions, ModulationError, Params,
};
use crate::profile::ProfileExpansion;
use crate::tridiag::TriLu;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error("blow-up detected at t = {t}: sup norm {sup:e}")]
    BlowUpDetected { t: f64, sup: f64 },
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),
    #[error("modulation re-projection failed at s = {s}: {source}")]
    ModulationDivergence { s: f64, source: ModulationError },
    #[error("lab reconstruction failed: {0}")]
    Reconstruction(ModulationError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Strang,
    CnRelax,
    /// Crank–Nicolson with the difference quotient
    /// `q = (ρ₊² + ρ₊ρ + ρ²)/3` of `ρ³/3`, solved by fixed-point iteration;
    /// conserves the discrete mass and energy up to the iteration tolerance.
    Conservative,
}

/// Crank–Nicolson solver for `(a + cH) u = r` with the lumped vertex row,
/// a diagonal `a` and the Dirichlet end; edges are coupled through the
/// vertex value by a Schur complement.
struct StarSystem {
    grid: GraphGrid,
    gamma: f64,
    c: C64,
}

impl StarSystem {
    fn factor_edge(&self, a: &[C64]) -> Result<TriLu<C64>, EvolutionError> {
        let n = self.grid.n_points;
        let ih2 = 1.0 / (self.grid.h() * self.grid.h());
        let off = -self.c * ih2;
        let d: Vec<C64> = (1..n - 1).map(|i| a[i] + self.c * 2.0 * ih2).collect();
        TriLu::factor(vec![off; n - 3], d, vec![off; n - 3])
            .map_err(|e| EvolutionError::LinearSolveFailure(format!("zero pivot at row {}", e.0)))
    }

    /// Response of the interior unknowns to a unit vertex value.
    fn vertex_response(&self, lu: &TriLu<C64>) -> Vec<C64> {
        let n = self.grid.n_points;
        let ih2 = 1.0 / (self.grid.h() * self.grid.h());
        let mut q = vec![C64::new(0.0, 0.0); n - 2];
        q[0] = self.c * ih2;
        lu.solve_in_place(&mut q);
        q
    }

    fn solve(&self, a0: C64, lus: &[(TriLu<C64>, Vec<C64>)], r: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let n = self.grid.n_points;
        let h = self.grid.h();
        let n_edges = self.grid.n_edges as f64;
        let mult = if r.len() == 1 { n_edges } else { 1.0 };
        let mut ps = Vec::with_capacity(r.len());
        let (mut sum_p, mut sum_q) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        let r0 = r.iter().map(|e| e[0]).sum::<C64>() / r.len() as f64;
        for (j, e) in r.iter().enumerate() {
            let (lu, q) = &lus[j.min(lus.len() - 1)];
            let mut p = e[1..n - 1].to_vec();
            lu.solve_in_place(&mut p);
            sum_p += p[0] * mult;
            sum_q += q[0] * mult;
            ps.push(p);
        }
        let w0 = n_edges * h / 2.0;
        let coef = a0 + self.c * ((n_edges - sum_q) / h + self.gamma) / w0;
        let u0 = (r0 + self.c * (sum_p / h) / w0) / coef;
        ps.into_iter()
            .enumerate()
            .map(|(j, p)| {
                let q = &lus[j.min(lus.len() - 1)].1;
                let mut u = Vec::with_capacity(n);
                u.push(u0);
                u.extend(p.iter().zip(q).map(|(pi, qi)| pi + u0 * qi));
                u.push(C64::new(0.0, 0.0));
                u
            })
            .collect()
    }
}

/// Lab-frame stepper with a fixed signed step `dt`.
pub struct LabStepper {
    system: StarSystem,
    scheme: Scheme,
    dt: f64,
    strang: Option<(TriLu<C64>, Vec<C64>)>,
    phi_prev: Option<Vec<Vec<f64>>>,
    /// Previous state, for the extrapolated initial guess of the implicit scheme.
    prev: Option<Vec<Vec<C64>>>,
    /// Number of halvings of the caller's step.
    depth: u32,
    /// Half-step stepper used when the implicit iteration does not contract.
    half: Option<Box<LabStepper>>,
}

impl LabStepper {
    pub fn new(
        grid: GraphGrid,
        gamma: f64,
        dt: f64,
        scheme: Scheme,
    ) -> Result<Self, EvolutionError> {
        grid.validate()?;
        if !(dt.is_finite() && dt != 0.0) {
            return Err(EvolutionError::InvalidConfig(format!("dt = {dt}")));
        }
        let system = StarSystem {
            grid,
            gamma,
            c: C64::new(0.0, dt / 2.0),
        };
        let strang = match scheme {
            Scheme::Strang | Scheme::Conservative => {
                let lu = system.factor_edge(&vec![C64::new(1.0, 0.0); grid.n_points])?;
                let q = system.vertex_response(&lu);
                Some((lu, q))
            }
            Scheme::CnRelax => None,
        };
        Ok(Self {
            system,
            scheme,
            dt,
            strang,
            phi_prev: None,
            prev: None,
            depth: 0,
            half: None,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn rotate(u: &mut [Vec<C64>], tau: f64) {
        for e in u.iter_mut() {
            for z in e.iter_mut() {
                *z *= C64::from_polar(1.0, z.norm_sqr().powi(2) * tau);
            }
        }
    }

    /// Advance `u` by one step.
    pub fn step(&mut self, u: &GraphFunction) -> Result<GraphFunction, EvolutionError> {
        let grid = *u.grid();
        if grid != self.system.grid {
            return Err(GraphError::GridMismatch.into());
        }
        let c = self.system.c;
        let vc = VertexCondition {
            gamma: self.system.gamma,
        };
        let out = match self.scheme {
            Scheme::Strang => {
                let mut e = u.stored_edges().to_vec();
                Self::rotate(&mut e, self.dt / 2.0);
                let half = edges_to_fn(grid, e)?;
                let hu = apply_hamiltonian(&half, vc)?;
                let r: Vec<Vec<C64>> = half
                    .stored_edges()
                    .iter()
                    .zip(hu.stored_edges())
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - c * y).collect())
                    .collect();
                let lus = std::slice::from_ref(self.strang.as_ref().expect("factored"));
                let mut e = self.system.solve(C64::new(1.0, 0.0), lus, &r);
                Self::rotate(&mut e, self.dt / 2.0);
                e
            }
            Scheme::CnRelax => {
                let now: Vec<Vec<f64>> = u
                    .stored_edges()
                    .iter()
                    .map(|e| e.iter().map(|z| z.norm_sqr().powi(2)).collect())
                    .collect();
                let prev = self.phi_prev.take().unwrap_or_else(|| now.clone());
                let phi: Vec<Vec<f64>> = now
                    .iter()
                    .zip(&prev)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| 2.0 * x - y).collect())
                    .collect();
                let hu = apply_hamiltonian(u, vc)?;
                let r: Vec<Vec<C64>> = u
                    .stored_edges()
                    .iter()
                    .zip(hu.stored_edges())
                    .zip(&phi)
                    .map(|((a, b), f)| {
                        a.iter()
                            .zip(b)
                            .zip(f)
                            .map(|((x, y), p)| x * (1.0 + c * p) - c * y)
                            .collect()
                    })
                    .collect();
                let mut lus = Vec::with_capacity(phi.len());
                for f in &phi {
                    let a: Vec<C64> = f.iter().map(|p| 1.0 - c * p).collect();
                    let lu = self.system.factor_edge(&a)?;
                    let q = self.system.vertex_response(&lu);
                    lus.push((lu, q));
                }
                let a0 = 1.0 - c * phi[0][0];
                let e = self.system.solve(a0, &lus, &r);
                self.phi_prev = Some(phi);
                e
            }
            Scheme::Conservative => match self.conservative(u) {
                Some(e) => e,
                None => self.split_step(u)?.stored_edges().to_vec(),
            },
        };
        edges_to_fn(grid, out)
    }
}

impl LabStepper {
    const FIXED_POINT_TOL: f64 = 1e-14;
    const FIXED_POINT_MAX: usize = 200;
    const MAX_SPLIT_DEPTH: u32 = 8;

    /// Two conservative steps of `dt/2`; both conserve the discrete mass
    /// and energy, so the composition does too.
    fn split_step(&mut self, u: &GraphFunction) -> Result<GraphFunction, EvolutionError> {
        if self.depth >= Self::MAX_SPLIT_DEPTH {
            return Err(EvolutionError::LinearSolveFailure(format!(
                "implicit nonlinear iteration did not converge at dt = {:e}",
                self.dt
            )));
        }
        if self.half.is_none() {
            let mut h = LabStepper::new(
                self.system.grid,
                self.system.gamma,
                self.dt / 2.0,
                self.scheme,
            )?;
            h.depth = self.depth + 1;
            self.half = Some(Box::new(h));
        }
        let half = self.half.as_mut().expect("created above");
        half.prev = None;
        let mid = half.step(u)?;
        half.step(&mid)
    }

    /// One implicit step, or `None` when the fixed-point iteration does not
    /// converge.
    fn conservative(&mut self, u: &GraphFunction) -> Option<Vec<Vec<C64>>> {
        let c = self.system.c;
        let hu = apply_hamiltonian(
            u,
            VertexCondition {
                gamma: self.system.gamma,
            },
        )
        .ok()?;
        let old = u.stored_edges();
        let lin: Vec<Vec<C64>> = old
            .iter()
            .zip(hu.stored_edges())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - c * y).collect())
            .collect();
        let lus = std::slice::from_ref(self.strang.as_ref().expect("factored"));
        let scale = nan_max(old.iter().flatten().map(|z| z.norm())).max(1e-300);
        let mut next = match self.prev.take() {
            Some(p) if p.len() == old.len() => old
                .iter()
                .zip(&p)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| 2.0 * x - y).collect())
                .collect(),
            _ => old.to_vec(),
        };
        self.prev = Some(old.to_vec());
        let mut best = f64::INFINITY;
        for k in 0..Self::FIXED_POINT_MAX {
            let r: Vec<Vec<C64>> = lin
                .iter()
                .zip(old.iter().zip(&next))
                .map(|(l, (a, b))| {
                    l.iter()
                        .zip(a.iter().zip(b))
                        .map(|(li, (x, y))| {
                            let (r0, r1) = (x.norm_sqr(), y.norm_sqr());
                            li + c * ((r1 * r1 + r1 * r0 + r0 * r0) / 3.0) * (x + y)
                        })
                        .collect()
                })
                .collect();
            let sol = self.system.solve(C64::new(1.0, 0.0), lus, &r);
            let change = nan_max(
                sol.iter()
                    .flatten()
                    .zip(next.iter().flatten())
                    .map(|(a, b)| (a - b).norm()),
            );
            next = sol;
            if change <= Self::FIXED_POINT_TOL * scale {
                return Some(next);
            }
            if !change.is_finite() || diverging(k, change, best, scale) {
                return None;
            }
            best = best.min(change);
        }
        None
    }
}

/// The fixed-point iteration is abandoned once the update grows well past
/// the smallest update seen so far; oscillating but contracting sequences
/// and round-off noise are left alone.
fn diverging(k: usize, change: f64, best: f64, scale: f64) -> bool {
    k >= 2 && change > 4.0 * best && change > 1e-10 * scale
}

/// Maximum that propagates NaN.
fn nan_max(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |m, x| {
        if m.is_nan() || x.is_nan() {
            f64::NAN
        } else {
            m.max(x)
        }
    })
}

fn edges_to_fn(grid: GraphGrid, e: Vec<Vec<C64>>) -> Result<GraphFunction, EvolutionError> {
    if e.len() == 1 {
        Ok(GraphFunction::radial(
            grid,
            e.into_iter().next().unwrap_or_default(),
        ))
    } else {
        Ok(GraphFunction::from_edges(grid, e)?)
    }
}

/// One Strang step of size `dt`.
pub fn step_lab(u: &GraphFunction, dt: f64, gamma: f64) -> Result<GraphFunction, EvolutionError> {
    LabStepper::new(*u.grid(), gamma, dt, Scheme::Strang)?.step(u)
}

/// Discrete conserved quantities and norms of a lab-frame function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabDiagnostics {
    /// Lumped `‖u‖²`.
    pub mass: f64,
    /// `½ Σ |Δu|²/h + (γ/2)|u(0)|² − (1/6) Σ w |u|⁶`.
    pub energy: f64,
    /// `(Σ |Δu|²/h)^{1/2}`.
    pub grad_norm: f64,
    pub sup_norm: f64,
    pub vertex_abs: f64,
}

pub fn lab_diagnostics(u: &GraphFunction, gamma: f64) -> LabDiagnostics {
    let grid = u.grid();
    let h = grid.h();
    let w = grid.lumped_weights();
    let mult = if u.is_radial() {
        grid.n_edges as f64
    } else {
        1.0
    };
    let (mut mass, mut grad, mut pot, mut sup) = (0.0, 0.0, 0.0, 0.0f64);
    for e in u.stored_edges() {
        for i in 0..e.len() {
            let a2 = e[i].norm_sqr();
            mass += w[i] * a2 * mult;
            pot += w[i] * a2.powi(3) * mult;
            sup = if sup.is_nan() || a2.is_nan() {
                f64::NAN
            } else {
                sup.max(a2.sqrt())
            };
            if i + 1 < e.len() {
                grad += (e[i + 1] - e[i]).norm_sqr() / h * mult;
            }
        }
    }
    let v0 = u.vertex_value().norm();
    LabDiagnostics {
        mass,
        energy: 0.5 * grad + 0.5 * gamma * v0 * v0 - pot / 6.0,
        grad_norm: grad.sqrt(),
        sup_norm: sup,
        vertex_abs: v0,
    }
}

/// State of a rescaled-frame run: `v = P_{b,λ} + h` in the frame `params`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledState {
    pub s: f64,
    pub t: f64,
    pub params: Params,
    pub v: Vec<C64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaledOptions {
    /// Signed step in `s`.
    pub ds: f64,
    /// Re-project every this many steps.
    pub reproject_every: usize,
    pub decompose: DecomposeOptions,
}

/// Rescaled-frame stepper for radial data.
pub struct RescaledStepper<'a> {
    exp: &'a ProfileExpansion,
    cg: CompactGrid,
    y2: Vec<f64>,
    opts: RescaledOptions,
    steps: usize,
}

impl<'a> RescaledStepper<'a> {
    pub fn new(exp: &'a ProfileExpansion, opts: RescaledOptions) -> Result<Self, EvolutionError> {
        if !(opts.ds.is_finite() && opts.ds != 0.0) || opts.reproject_every == 0 {
            return Err(EvolutionError::InvalidConfig(format!(
                "ds = {}, reproject_every = {}",
                opts.ds, opts.reproject_every
            )));
        }
        let g = exp.grid;
        Ok(Self {
            exp,
            cg: CompactGrid::new(g.n_points, g.h()),
            y2: (0..g.n_points).map(|i| g.y(i).powi(2)).collect(),
            opts,
            steps: 0,
        })
    }

    /// Initial state `v = P_{b,λ}` at `(s, t)`.
    pub fn start(&self, s: f64, t: f64, params: Params) -> RescaledState {
        RescaledState {
            s,
            t,
            params,
            v: self.exp.profile_values(params.b, params.lambda),
        }
    }

    fn frame_rhs(&self, b: f64, l: f64) -> (f64, f64) {
        (self.exp.alpha(b, l) - b * b, -b * l)
    }

    fn frame_rk4(&self, b: f64, l: f64, ds: f64) -> (f64, f64) {
        let k1 = self.frame_rhs(b, l);
        let k2 = self.frame_rhs(b + 0.5 * ds * k1.0, l + 0.5 * ds * k1.1);
        let k3 = self.frame_rhs(b + 0.5 * ds * k2.0, l + 0.5 * ds * k2.1);
        let k4 = self.frame_rhs(b + ds * k3.0, l + ds * k3.1);
        (
            b + ds / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            l + ds / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        )
    }

    const FIXED_POINT_TOL: f64 = 1e-14;
    const FIXED_POINT_MAX: usize = 200;

    /// Advance one step and re-project when due.
    pub fn step(&mut self, st: &RescaledState) -> Result<RescaledState, EvolutionError> {
        let ds = self.opts.ds;
        let p = st.params;
        let (b_mid, l_mid) = self.frame_rk4(p.b, p.lambda, ds / 2.0);
        let (b_end, l_end) = self.frame_rk4(p.b, p.lambda, ds);
        if !(l_end > 0.0 && l_mid > 0.0) {
            return Err(EvolutionError::ModulationDivergence {
                s: st.s,
                source: ModulationError::NonPositiveLambda(l_end),
            });
        }
        let alpha = self.exp.alpha(b_mid, l_mid);
        let sigma = l_mid * self.exp.gamma / self.exp.grid.n_edges as f64;
        let pot: Vec<f64> = self.y2.iter().map(|y2| 1.0 - alpha * y2 / 4.0).collect();
        let a = self.cg.a_bands(&pot, sigma);
        let bm = self.cg.b_bands();
        let tau = C64::new(0.0, ds / 2.0);
        let lhs = bm.combine(C64::new(1.0, 0.0), &a, tau);
        let lu = lhs.factor().map_err(|e| {
            EvolutionError::LinearSolveFailure(format!("zero pivot at row {}", e.0))
        })?;
        let v0 = &st.v;
        let m = self.cg.m();
        let bv = bm.matvec(v0);
        let av = a.matvec(v0);
        let lin: Vec<C64> = bv.iter().zip(&av).map(|(x, y)| x - tau * y).collect();
        let scale = nan_max(v0.iter().map(|z| z.norm())).max(1e-300);
        let mut v = v0.clone();
        let mut converged = false;
        let mut best = f64::INFINITY;
        for k in 0..Self::FIXED_POINT_MAX {
            let nl: Vec<C64> = v0[..m]
                .iter()
                .zip(&v[..m])
                .map(|(x, y)| {
                    let (r0, r1) = (x.norm_sqr(), y.norm_sqr());
                    (x + y) * ((r1 * r1 + r1 * r0 + r0 * r0) / 3.0)
                })
                .collect();
            let bn = bm.matvec(&nl);
            let mut r: Vec<C64> = lin.iter().zip(&bn).map(|(l, q)| l + tau * q).collect();
            lu.solve_in_place(&mut r);
            r.push(C64::new(0.0, 0.0));
            let change = nan_max(r.iter().zip(&v).map(|(x, y)| (x - y).norm()));
            v = r;
            if change <= Self::FIXED_POINT_TOL * scale {
                converged = true;
                break;
            }
            if !change.is_finite() || diverging(k, change, best, scale) {
                break;
            }
            best = best.min(change);
        }
        if !converged {
            return Err(EvolutionError::LinearSolveFailure(
                "implicit nonlinear iteration did not converge".into(),
            ));
        }
        let t = st.t + ds / 6.0 * (p.lambda.powi(2) + 4.0 * l_mid * l_mid + l_end * l_end);
        let s = st.s + ds;
        let frame = Params {
            theta: p.theta + ds,
            b: b_end,
            lambda: l_end,
        };
        self.steps += 1;
        if self.steps % self.opts.reproject_every != 0 {
            return Ok(RescaledState {
                s,
                t,
                params: frame,
                v,
            });
        }
        let grid = self.exp.grid;
        let vf = GraphFunction::radial(grid, v);
        let dec = decompose_in_frame(&vf, frame, frame, self.exp, self.opts.decompose)
            .map_err(|source| EvolutionError::ModulationDivergence { s, source })?;
        let pv = self.exp.profile_values(dec.params.b, dec.params.lambda);
        let v: Vec<C64> = dec.h.values().iter().zip(&pv).map(|(h, p)| h + p).collect();
        Ok(RescaledState {
            s,
            t,
            params: dec.params,
            v,
        })
    }
}

/// Relative lumped `L²` distance `‖u − r‖/‖r‖` over `x ≤ x_max` on every edge.
pub fn relative_l2_error(
    u: &GraphFunction,
    reference: &GraphFunction,
    x_max: f64,
) -> Result<f64, EvolutionError> {
    let grid = *reference.grid();
    if *u.grid() != grid {
        return Err(GraphError::GridMismatch.into());
    }
    let w = grid.lumped_weights();
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..grid.n_edges {
        let (a, b) = (u.edge(j), reference.edge(j));
        for i in (0..grid.n_points).take_while(|&i| grid.y(i) <= x_max) {
            num += w[i] * (a[i] - b[i]).norm_sqr();
            den += w[i] * b[i].norm_sqr();
        }
    }
    Ok((num / den).sqrt())
}

/// The lab-frame function `λ^{−1/2} e^{iθ − ibx²/(4λ²)} v(x/λ)` on `lab`.
pub fn rescaled_to_lab(
    st: &RescaledState,
    exp: &ProfileExpansion,
    lab: GraphGrid,
) -> Result<GraphFunction, EvolutionError> {
    let p = exp.profile_values(st.params.b, st.params.lambda);
    let h: Vec<C64> = st.v.iter().zip(&p).map(|(v, p)| v - p).collect();
    synthesize(st.params, &GraphFunction::radial(exp.grid, h), exp, lab)
        .map_err(EvolutionError::Reconstruction)
}

/// Norms of the rest `h = v − P_{b,λ}` and the lab-frame quantities of a
/// rescaled state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaledDiagnostics {
    pub mass: f64,
    pub energy: f64,
    pub grad_norm: f64,
    pub sup_norm: f64,
    pub vertex_abs: f64,
    pub h_l2: f64,
    pub h_h1: f64,
    pub yh_l2: f64,
    /// `‖h‖_λ = (‖h‖²_{H¹} + λ‖yh‖²)^{1/2}`.
    pub h_lambda: f64,
}

pub fn rescaled_diagnostics(st: &RescaledState, exp: &ProfileExpansion) -> RescaledDiagnostics {
    let grid = exp.grid;
    let n = grid.n_points;
    let hh = grid.h();
    let Params { b, lambda, .. } = st.params;
    let v = &st.v;
    let dv = derivative(v, hh);
    let integ =
        |f: &dyn Fn(usize) -> f64| integrate_real(&grid, &(0..n).map(f).collect::<Vec<_>>());
    let mass = integ(&|i| v[i].norm_sqr());
    let wy2 = integ(&|i| (dv[i] - C64::new(0.0, b * grid.y(i) / 2.0) * v[i]).norm_sqr());
    let l6 = integ(&|i| v[i].norm_sqr().powi(3));
    let energy =
        (0.5 * wy2 + 0.5 * exp.gamma * lambda * v[0].norm_sqr() - l6 / 6.0) / (lambda * lambda);
    let p = exp.profile_values(b, lambda);
    let h: Vec<C64> = v.iter().zip(&p).map(|(a, b)| a - b).collect();
    let dh = derivative(&h, hh);
    let h2 = integ(&|i| h[i].norm_sqr());
    let dh2 = integ(&|i| dh[i].norm_sqr());
    let yh2 = integ(&|i| (grid.y(i) * h[i].norm()).powi(2));
    let sup = nan_max(v.iter().map(|z| z.norm()));
    RescaledDiagnostics {
        mass,
        energy,
        grad_norm: wy2.sqrt() / lambda,
        sup_norm: sup / lambda.sqrt(),
        vertex_abs: v[0].norm() / lambda.sqrt(),
        h_l2: h2.sqrt(),
        h_h1: (h2 + dh2).sqrt(),
        yh_l2: yh2.sqrt(),
        h_lambda: (h2 + dh2 + lambda * yh2).sqrt(),
    }
}

/// Bit-stable snapshot column order.
pub const SNAPSHOT_COLUMNS: [&str; 14] = [
    "t",
    "s",
    "mass",
    "energy",
    "grad_norm",
    "sup_norm",
    "vertex_abs",
    "b",
    "lambda",
    "theta",
    "h_l2",
    "h_h1",
    "yh_l2",
    "mod_norm",
];

/// One row of the snapshot table; rescaled-only fields are NaN in lab runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub t: f64,
    pub s: f64,
    pub mass: f64,
    pub energy: f64,
    pub grad_norm: f64,
    pub sup_norm: f64,
    pub vertex_abs: f64,
    pub b: f64,
    pub lambda: f64,
    pub theta: f64,
    pub h_l2: f64,
    pub h_h1: f64,
    pub yh_l2: f64,
    pub mod_norm: f64,
}

impl SnapshotRecord {
    pub fn row(&self) -> [f64; 14] {
        [
            self.t,
            self.s,
            self.mass,
            self.energy,
            self.grad_norm,
            self.sup_norm,
            self.vertex_abs,
            self.b,
            self.lambda,
            self.theta,
            self.h_l2,
            self.h_h1,
            self.yh_l2,
            self.mod_norm,
        ]
    }

    fn lab(t: f64, d: LabDiagnostics) -> Self {
        Self {
            t,
            s: f64::NAN,
            mass: d.mass,
            energy: d.energy,
            grad_norm: d.grad_norm,
            sup_norm: d.sup_norm,
            vertex_abs: d.vertex_abs,
            b: f64::NAN,
            lambda: f64::NAN,
            theta: f64::NAN,
            h_l2: f64::NAN,
            h_h1: f64::NAN,
            yh_l2: f64::NAN,
            mod_norm: f64::NAN,
        }
    }

    fn rescaled(st: &RescaledState, d: RescaledDiagnostics) -> Self {
        Self {
            t: st.t,
            s: st.s,
            mass: d.mass,
            energy: d.energy,
            grad_norm: d.grad_norm,
            sup_norm: d.sup_norm,
            vertex_abs: d.vertex_abs,
            b: st.params.b,
            lambda: st.params.lambda,
            theta: st.params.theta,
            h_l2: d.h_l2,
            h_h1: d.h_h1,
            yh_l2: d.yh_l2,
            mod_norm: f64::NAN,
        }
    }
}

/// Terminal status of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    BlowUp { t: f64 },
    ModulationExit { s: f64, reason: String },
}

/// Result of a lab-frame run.
#[derive(Debug, Clone, PartialEq)]
pub struct LabRun {
    pub snapshots: Vec<SnapshotRecord>,
    pub status: RunStatus,
    pub final_state: GraphFunction,
    pub final_time: f64,
    /// Largest `|M(t) − M(0)|/M(0)` over all steps.
    pub max_mass_drift: f64,
    /// Largest `|E(t) − E(0)|/(1 + |E(0)|)` over all steps.
    pub max_energy_drift: f64,
}

/// Evolve `u0` from `t_start` to `t_end` with step magnitude `dt`, recording
/// a snapshot every `snapshot_every` steps, and stopping with
/// [`RunStatus::BlowUp`] once the sup norm exceeds `threshold` times its
/// initial value.
pub fn run_lab(
    u0: &GraphFunction,
    gamma: f64,
    scheme: Scheme,
    (t_start, t_end): (f64, f64),
    dt: f64,
    snapshot_every: usize,
    threshold: f64,
) -> Result<LabRun, EvolutionError> {
    if !(dt > 0.0) || !(threshold > 1.0) || snapshot_every == 0 {
        return Err(EvolutionError::InvalidConfig(format!(
            "dt = {dt}, threshold = {threshold}, snapshot_every = {snapshot_every}"
        )));
    }
    let span = t_end - t_start;
    let n_steps = (span.abs() / dt).round().max(1.0) as usize;
    let h = span / n_steps as f64;
    let mut stepper = LabStepper::new(*u0.grid(), gamma, h, scheme)?;
    let d0 = lab_diagnostics(u0, gamma);
    let mut snapshots = vec![SnapshotRecord::lab(t_start, d0)];
    let mut u = u0.clone();
    let (mut max_mass_drift, mut max_energy_drift) = (0.0f64, 0.0f64);
    let mut status = RunStatus::Completed;
    let mut t = t_start;
    for k in 1..=n_steps {
        u = stepper.step(&u)?;
        t = t_start + k as f64 * h;
        let d = lab_diagnostics(&u, gamma);
        if !(d.sup_norm.is_finite() && d.energy.is_finite()) || d.sup_norm > threshold * d0.sup_norm
        {
            snapshots.push(SnapshotRecord::lab(t, d));
            status = RunStatus::BlowUp { t };
            break;
        }
        max_mass_drift = max_mass_drift.max((d.mass - d0.mass).abs() / d0.mass.max(1e-300));
        max_energy_drift =
            max_energy_drift.max((d.energy - d0.energy).abs() / (1.0 + d0.energy.abs()));
        if k % snapshot_every == 0 || k == n_steps {
            snapshots.push(SnapshotRecord::lab(t, d));
        }
    }
    Ok(LabRun {
        snapshots,
        status,
        final_state: u,
        final_time: t,
        max_mass_drift,
        max_energy_drift,
    })
}

/// Result of a rescaled-frame run.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledRun {
    pub snapshots: Vec<SnapshotRecord>,
    pub status: RunStatus,
    pub final_state: RescaledState,
    /// `(s, π)` after every step, for `Mod(s)`.
    pub history: Vec<(f64, Params)>,
    /// Largest `‖h‖_λ` seen at snapshots.
    pub max_h_lambda: f64,
}

/// Evolve from `start` to `s_end` with the signed step of `opts`.
pub fn run_rescaled(
    exp: &ProfileExpansion,
    start: RescaledState,
    s_end: f64,
    opts: RescaledOptions,
    snapshot_every: usize,
) -> Result<RescaledRun, EvolutionError> {
    if snapshot_every == 0 {
        return Err(EvolutionError::InvalidConfig("snapshot_every = 0".into()));
    }
    let span = s_end - start.s;
    let n_steps = (span.abs() / opts.ds.abs()).round().max(1.0) as usize;
    let ds = span / n_steps as f64;
    let mut stepper = RescaledStepper::new(exp, RescaledOptions { ds, ..opts })?;
    let d0 = rescaled_diagnostics(&start, exp);
    let mut snapshots = vec![SnapshotRecord::rescaled(&start, d0)];
    let mut snap_index = vec![0usize];
    let mut history = vec![(start.s, start.params)];
    let mut max_h_lambda = d0.h_lambda;
    let mut st = start;
    let mut status = RunStatus::Completed;
    for k in 1..=n_steps {
        match stepper.step(&st) {
            Ok(next) => st = next,
            Err(EvolutionError::ModulationDivergence { s, source }) => {
                status = RunStatus::ModulationExit {
                    s,
                    reason: source.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        }
        history.push((st.s, st.params));
        if k % snapshot_every == 0 || k == n_steps {
            let d = rescaled_diagnostics(&st, exp);
            max_h_lambda = max_h_lambda.max(d.h_lambda);
            snapshots.push(SnapshotRecord::rescaled(&st, d));
            snap_index.push(k);
        }
    }
    if history.len() >= 3 && opts.reproject_every == 1 {
        let mods = mod_vector(&history, exp)
            .map_err(|source| EvolutionError::ModulationDivergence { s: st.s, source })?;
        for (snap, &k) in snapshots.iter_mut().zip(&snap_index) {
            if k >= 1 && k <= mods.len() {
                snap.mod_norm = mods[k - 1].norm;
            }
        }
    }
    Ok(RescaledRun {
        snapshots,
        status,
        final_state: st,
        history,
        max_h_lambda,
    })
}

/// Power-law fit `y ≈ C |t − t*|^p` over `|t − t*| ∈ window`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    /// `y/|t − t*|^p` at the window end closest to `t*`.
    pub constant: f64,
    pub r2: f64,
    pub samples: usize,
}

/// Least-squares slope of `log y` against `log |t − t*|` for samples with
/// `|t − t*|` inside `window`; needs at least 20 samples.
pub fn fit_rate(
    t: &[f64],
    y: &[f64],
    window: (f64, f64),
    t_star: f64,
) -> Result<RateFit, EvolutionError> {
    let (lo, hi) = (window.0.min(window.1), window.0.max(window.1));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&ti, &yi) in t.iter().zip(y) {
        let a = (ti - t_star).abs();
        if a >= lo && a <= hi && yi > 0.0 && yi.is_finite() && a > 0.0 {
            xs.push(a.ln());
            ys.push(yi.ln());
        }
    }
    if xs.len() < 20 {
        return Err(FitError::InsufficientData {
            got: xs.len(),
            need: 20,
        }
        .into());
    }
    let f = line_fit(&xs, &ys)?;
    let (imin, _) =
        xs.iter().enumerate().fold(
            (0, f64::INFINITY),
            |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc },
        );
    let constant = ys[imin].exp() / xs[imin].exp().powf(f.slope);
    Ok(RateFit {
        exponent: f.slope,
        constant,
        r2: f.r2,
        samples: xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground_state::{pseudo_conformal, q};

    fn l2_error(a: &GraphFunction, b: &GraphFunction) -> f64 {
        relative_l2_error(a, b, f64::INFINITY).unwrap()
    }

    #[test]
    fn time_reversal_and_radial_equivalence() {
        let grid = GraphGrid::new(3, 10.0, 801).unwrap();
        let u0 = GraphFunction::from_fn(grid, |x| C64::from_polar(1.2 * (-x * x).exp(), 0.3 * x));
        let mut fwd = LabStepper::new(grid, -0.7, 1e-3, Scheme::Strang).unwrap();
        let mut bwd = LabStepper::new(grid, -0.7, -1e-3, Scheme::Strang).unwrap();
        let mut u = u0.clone();
        for _ in 0..5 {
            u = fwd.step(&u).unwrap();
        }
        for _ in 0..5 {
            u = bwd.step(&u).unwrap();
        }
        assert!(l2_error(&u, &u0) < 1e-10);
        // the same data stored on every edge evolves identically
        let full = u0.to_full();
        let mut a = LabStepper::new(grid, -0.7, 1e-3, Scheme::Strang).unwrap();
        let mut b = LabStepper::new(grid, -0.7, 1e-3, Scheme::Strang).unwrap();
        let (mut ur, mut uf) = (u0.clone(), full);
        for _ in 0..20 {
            ur = a.step(&ur).unwrap();
            uf = b.step(&uf).unwrap();
            for j in 0..3 {
                let err = ur
                    .edge(0)
                    .iter()
                    .zip(uf.edge(j))
                    .map(|(x, y)| (x - y).norm())
                    .fold(0.0, f64::max);
                assert!(err < 1e-10);
            }
        }
    }

    #[test]
    fn non_radial_data_conserves_mass() {
        let grid = GraphGrid::new(3, 10.0, 801).unwrap();
        // smooth edges with Σ u_j'(0) = γ u(0), so the data lie in the operator domain
        let slopes = [0.8, 0.3, -0.3];
        let edges: Vec<Vec<C64>> = (0..3)
            .map(|j| {
                (0..grid.n_points)
                    .map(|i| {
                        let x = grid.y(i);
                        C64::new(
                            (-x * x).exp() * (1.0 + slopes[j] * x + 0.3 * j as f64 * x * x),
                            0.1 * x * x * (-x * x).exp(),
                        )
                    })
                    .collect()
            })
            .collect();
        let u0 = GraphFunction::from_edges(grid, edges).unwrap();
        for scheme in [Scheme::Strang, Scheme::CnRelax, Scheme::Conservative] {
            let run = run_lab(&u0, 0.8, scheme, (0.0, 0.5), 1e-3, 50, 50.0).unwrap();
            assert_eq!(run.status, RunStatus::Completed);
            assert!(
                run.max_mass_drift < 1e-12,
                "{:?} {}",
                scheme,
                run.max_mass_drift
            );
            assert!(
                run.max_energy_drift < 1e-4,
                "{:?} {}",
                scheme,
                run.max_energy_drift
            );
            if scheme == Scheme::Conservative {
                assert!(run.max_energy_drift < 1e-11, "{}", run.max_energy_drift);
            }
        }
    }

    #[test]
    fn conservative_step_splits_when_iteration_stalls() {
        let grid = GraphGrid::new(2, 20.0, 1601).unwrap();
        let u0 = GraphFunction::from_real_fn(grid, |x| 0.95 * q(x));
        let d0 = lab_diagnostics(&u0, 0.0);
        let mut stepper = LabStepper::new(grid, 0.0, 4.0, Scheme::Conservative).unwrap();
        let u1 = stepper.step(&u0).unwrap();
        assert!(stepper.half.is_some());
        let d1 = lab_diagnostics(&u1, 0.0);
        assert!(d1.sup_norm.is_finite());
        assert!(
            (d1.mass - d0.mass).abs() < 1e-12 * d0.mass,
            "{} {}",
            d0.mass,
            d1.mass
        );
        assert!(
            (d1.energy - d0.energy).abs() < 1e-11 * (1.0 + d0.energy.abs()),
            "{} {}",
            d0.energy,
            d1.energy
        );
    }

    #[test]
    fn nan_max_propagates() {
        assert!(nan_max([1.0, f64::NAN, 2.0].into_iter()).is_nan());
        assert_eq!(nan_max([1.0, 3.0, 2.0].into_iter()), 3.0);
    }

    #[test]
    fn standing_wave_modulus() {
        let grid = GraphGrid::new(2, 20.0, 2001).unwrap();
        let u0 = GraphFunction::from_real_fn(grid, q);
        let run = run_lab(&u0, 0.0, Scheme::Strang, (0.0, 1.0), 1e-3, 100, 50.0).unwrap();
        let err = run
            .final_state
            .values()
            .iter()
            .zip(u0.values())
            .map(|(a, b)| (a.norm() - b.re).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn pseudo_conformal_short_run() {
        let grid = GraphGrid::new(2, 20.0, 2001).unwrap();
        let u0 = pseudo_conformal(-1.0, grid).unwrap();
        for scheme in [Scheme::Strang, Scheme::CnRelax, Scheme::Conservative] {
            let run = run_lab(&u0, 0.0, scheme, (-1.0, -0.8), 1e-3, 50, 50.0).unwrap();
            let err = l2_error(&run.final_state, &pseudo_conformal(-0.8, grid).unwrap());
            assert!(err < 2e-3, "{scheme:?} {err}");
            assert!(run.max_mass_drift < 1e-12);
        }
    }

    #[test]
    fn rescaled_ground_state_is_stationary() {
        let exp = crate::profile::build_expansion(2, 0.0, GraphGrid::standard(2).unwrap()).unwrap();
        let opts = RescaledOptions {
            ds: 0.01,
            reproject_every: 1,
            decompose: DecomposeOptions::default(),
        };
        let start = RescaledStepper::new(&exp, opts).unwrap().start(
            0.0,
            0.0,
            Params {
                theta: 0.0,
                b: 0.0,
                lambda: 0.3,
            },
        );
        let run = run_rescaled(&exp, start, 1.0, opts, 10).unwrap();
        assert_eq!(run.status, RunStatus::Completed);
        assert!(run.max_h_lambda < 1e-10, "{}", run.max_h_lambda);
        let p = run.final_state.params;
        assert!(
            (p.lambda - 0.3).abs() < 1e-12 && p.b.abs() < 1e-11 && (p.theta - 1.0).abs() < 1e-11,
            "{p:?}"
        );
        // t advances by λ² per unit s
        assert!((run.final_state.t - 0.09).abs() < 1e-12);
        assert!(run
            .snapshots
            .iter()
            .filter(|r| r.mod_norm.is_finite())
            .all(|r| r.mod_norm < 1e-9));
    }

    #[test]
    fn rescaled_options_are_validated() {
        let exp =
            crate::profile::build_expansion(2, 0.0, GraphGrid::new(2, 20.0, 801).unwrap()).unwrap();
        let bad = RescaledOptions {
            ds: 0.0,
            reproject_every: 1,
            decompose: DecomposeOptions::default(),
        };
        assert!(RescaledStepper::new(&exp, bad).is_err());
        assert!(RescaledStepper::new(
            &exp,
            RescaledOptions {
                ds: 0.1,
                reproject_every: 0,
                ..bad
            }
        )
        .is_err());
    }

    #[test]
    fn fit_rate_exact_power_law() {
        let t: Vec<f64> = (0..50).map(|i| -1.0 + i as f64 * 0.019).collect();
        let y: Vec<f64> = t.iter().map(|t| t.abs().powf(-2.0 / 3.0)).collect();
        let f = fit_rate(&t, &y, (0.0, 10.0), 0.0).unwrap();
        assert!((f.exponent + 2.0 / 3.0).abs() < 1e-12);
        assert!((f.constant - 1.0).abs() < 1e-12);
        assert!(fit_rate(&t[..10], &y[..10], (0.0, 10.0), 0.0).is_err());
    }

    #[test]
    fn invalid_configuration() {
        let grid = GraphGrid::new(2, 10.0, 101).unwrap();
        let u0 = GraphFunction::zeros(grid);
        assert!(run_lab(&u0, 0.0, Scheme::Strang, (0.0, 1.0), 0.0, 1, 50.0).is_err());
        assert!(run_lab(&u0, 0.0, Scheme::Strang, (0.0, 1.0), 0.1, 1, 1.0).is_err());
    }
}
