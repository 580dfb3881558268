//! Modulation decomposition `u = λ^{−1/2} e^{iθ − ib x²/(4λ²)} (P_{b,λ} + h)(x/λ)`
//! with the orthogonality conditions `(h, y²P) = (h, iΛP) = (h, iρ) = 0`,
//! the `Mod(s)` defects, the `‖·‖_λ` norm and the energy-virial functional.
//!
//! Inner products are real: `(f, g) = Re ∫ f ḡ` over the graph, by Simpson.

use crate::fit::least_squares;
use crate::graph::{derivative, interpolate, GraphError, GraphFunction, GraphGrid, C64};
use crate::profile::{ProfileError, ProfileExpansion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModulationError {
    #[error("grid does not cover the scaled support: need {needed}, have {available}")]
    GridCoverage { needed: f64, available: f64 },
    #[error("input is outside the modulation tube (relative distance {0:e})")]
    OutsideTube(f64),
    #[error("Newton iteration did not converge in {0} iterations")]
    NewtonDivergence(usize),
    #[error("singular modulation Jacobian")]
    SingularJacobian,
    #[error("insufficient data: {got} states, need at least {need}")]
    InsufficientData { got: usize, need: usize },
    #[error("states are not uniformly spaced in s")]
    NonUniform,
    #[error("λ must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Modulation parameters `(θ, b, λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub theta: f64,
    pub b: f64,
    pub lambda: f64,
}

impl Params {
    pub fn new(theta: f64, b: f64, lambda: f64) -> Self {
        Self { theta, b, lambda }
    }

    /// The identity frame: the lab frame seen as a rescaled frame.
    pub fn identity() -> Self {
        Self {
            theta: 0.0,
            b: 0.0,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    /// Largest accepted `‖h(guess)‖/‖Q‖`.
    pub tube: f64,
    /// Relative orthogonality tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Allowed relative overshoot of the scaled support beyond the source grid.
    pub coverage_slack: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            tube: 0.5,
            tol: 1e-9,
            max_iter: 30,
            coverage_slack: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulationState {
    pub params: Params,
    /// Rest in rescaled variables, on the profile grid.
    pub h: GraphFunction,
    /// `|(h, d)|/(‖d‖ max(‖h‖, 1e−6‖P + h‖))` for `d = y²P, iΛP, iρ`.
    pub defects: [f64; 3],
    pub iterations: usize,
    /// `‖h(guess)‖/‖Q‖`.
    pub tube_distance: f64,
}

/// Relative floor on `‖h‖` in the orthogonality defects: a rest at the
/// interpolation noise level has no meaningful direction.
const DEFECT_FLOOR: f64 = 1e-6;

/// Newton step size treated as converged regardless of the defect test.
const STAGNATION_STEP: f64 = 1e-13;

/// Per-edge samples: one stored edge for radial data, else one per edge.
type Edges = Vec<Vec<C64>>;

fn simpson(grid: &GraphGrid) -> Vec<f64> {
    grid.simpson_weights()
}

/// `Re Σ_edges ∫ a b̄`, broadcasting single-edge (radial) operands.
fn ip(grid: &GraphGrid, w: &[f64], a: &Edges, b: &Edges) -> f64 {
    let edge = |x: &[C64], y: &[C64]| -> f64 {
        x.iter()
            .zip(y)
            .zip(w)
            .map(|((p, q), w)| (p * q.conj()).re * w)
            .sum()
    };
    if a.len() == 1 && b.len() == 1 {
        edge(&a[0], &b[0]) * grid.n_edges as f64
    } else {
        (0..grid.n_edges)
            .map(|j| edge(&a[j.min(a.len() - 1)], &b[j.min(b.len() - 1)]))
            .sum()
    }
}

fn radial(v: Vec<C64>) -> Edges {
    vec![v]
}

fn map_edges(e: &Edges, f: impl Fn(usize, C64) -> C64) -> Edges {
    e.iter()
        .map(|v| v.iter().enumerate().map(|(i, &z)| f(i, z)).collect())
        .collect()
}

fn sub_edges(a: &Edges, b: &Edges) -> Edges {
    let n = a.len().max(b.len());
    (0..n)
        .map(|j| {
            let (x, y) = (&a[j.min(a.len() - 1)], &b[j.min(b.len() - 1)]);
            x.iter().zip(y).map(|(p, q)| p - q).collect()
        })
        .collect()
}

/// `Λf = f/2 + y f'` on every stored edge.
fn lambda_op(grid: &GraphGrid, e: &Edges) -> Edges {
    let h = grid.h();
    e.iter()
        .map(|v| {
            let d = derivative(v, h);
            v.iter()
                .zip(&d)
                .enumerate()
                .map(|(i, (z, dz))| z * 0.5 + dz * grid.y(i))
                .collect()
        })
        .collect()
}

fn to_function(grid: GraphGrid, e: Edges) -> Result<GraphFunction, GraphError> {
    if e.len() == 1 {
        Ok(GraphFunction::radial(
            grid,
            e.into_iter().next().unwrap_or_default(),
        ))
    } else {
        GraphFunction::from_edges(grid, e)
    }
}

/// `u(x) = λ^{−1/2} e^{iθ − ibx²/(4λ²)} (P_{b,λ} + h)(x/λ)` on `lab`.
pub fn synthesize(
    params: Params,
    h: &GraphFunction,
    exp: &ProfileExpansion,
    lab: GraphGrid,
) -> Result<GraphFunction, ModulationError> {
    let Params { theta, b, lambda } = params;
    if !(lambda > 0.0) {
        return Err(ModulationError::NonPositiveLambda(lambda));
    }
    let rg = exp.grid;
    if *h.grid() != rg || lab.n_edges != rg.n_edges {
        return Err(GraphError::GridMismatch.into());
    }
    let needed = lambda * rg.l_max;
    if needed > lab.l_max * (1.0 + 1e-12) {
        return Err(ModulationError::GridCoverage {
            needed,
            available: lab.l_max,
        });
    }
    let p = exp.profile_values(b, lambda);
    let v: Edges = h
        .stored_edges()
        .iter()
        .map(|he| he.iter().zip(&p).map(|(a, b)| a + b).collect())
        .collect();
    let amp = lambda.powf(-0.5);
    let out: Edges = v
        .iter()
        .map(|ve| {
            (0..lab.n_points)
                .map(|i| {
                    let x = lab.y(i);
                    let y = x / lambda;
                    let val = if y <= rg.l_max {
                        interpolate(ve, rg.h(), y)
                    } else {
                        C64::new(0.0, 0.0)
                    };
                    val * C64::from_polar(amp, theta - b * y * y / 4.0)
                })
                .collect()
        })
        .collect();
    Ok(to_function(lab, out)?)
}

/// `Θ_π^{−1} Θ_{π_f} v` on the profile grid: with `r = λ/λ_f`,
/// `r^{1/2} e^{i(θ_f − θ)} e^{i(b − b_f r²) y²/4} v(r y)`.
pub fn pull_back(src: &GraphFunction, frame: Params, target: Params, grid: GraphGrid) -> Edges {
    let r = target.lambda / frame.lambda;
    let c = target.b - frame.b * r * r;
    let sg = *src.grid();
    src.stored_edges()
        .iter()
        .map(|ve| {
            (0..grid.n_points)
                .map(|i| {
                    let y = grid.y(i);
                    let x = r * y;
                    let val = if x <= sg.l_max {
                        interpolate(ve, sg.h(), x)
                    } else {
                        C64::new(0.0, 0.0)
                    };
                    val * C64::from_polar(r.sqrt(), frame.theta - target.theta + c * y * y / 4.0)
                })
                .collect()
        })
        .collect()
}

/// Everything Newton needs at one parameter point.
struct Point {
    h: Edges,
    dirs: [Edges; 3],
    jac: [[f64; 3]; 3],
    f: [f64; 3],
    dir_norms: [f64; 3],
    h_norm: f64,
    g_norm: f64,
}

fn evaluate(
    src: &GraphFunction,
    frame: Params,
    pi: Params,
    exp: &ProfileExpansion,
    w: &[f64],
) -> Point {
    let grid = exp.grid;
    let i = C64::new(0.0, 1.0);
    let y2 = |k: usize| grid.y(k).powi(2);
    let g = pull_back(src, frame, pi, grid);
    let p = radial(exp.profile_values(pi.b, pi.lambda));
    let (db, dl) = exp.profile_derivatives(pi.b, pi.lambda);
    let (db, dl) = (radial(db), radial(dl));
    let h = sub_edges(&g, &p);
    let lp = lambda_op(&grid, &p);
    let rho = radial(exp.rho.iter().map(|&r| C64::new(r, 0.0)).collect());
    let dirs = [
        map_edges(&p, |k, z| z * y2(k)),
        map_edges(&lp, |_, z| i * z),
        map_edges(&rho, |_, z| i * z),
    ];
    let lg = lambda_op(&grid, &g);
    let dh = [
        map_edges(&g, |_, z| -i * z),
        sub_edges(&map_edges(&g, |k, z| i * z * y2(k) / 4.0), &db),
        sub_edges(
            &lg.iter()
                .zip(&g)
                .map(|(a, b)| {
                    a.iter()
                        .zip(b)
                        .enumerate()
                        .map(|(k, (x, z))| (x - i * pi.b * y2(k) / 2.0 * z) / pi.lambda)
                        .collect()
                })
                .collect(),
            &dl,
        ),
    ];
    let zero: Edges = radial(vec![C64::new(0.0, 0.0); grid.n_points]);
    let ddirs: [[Edges; 3]; 3] = [
        [
            zero.clone(),
            map_edges(&db, |k, z| z * y2(k)),
            map_edges(&dl, |k, z| z * y2(k)),
        ],
        [
            zero.clone(),
            map_edges(&lambda_op(&grid, &db), |_, z| i * z),
            map_edges(&lambda_op(&grid, &dl), |_, z| i * z),
        ],
        [zero.clone(), zero.clone(), zero],
    ];
    let mut jac = [[0.0; 3]; 3];
    let mut f = [0.0; 3];
    let mut dir_norms = [0.0; 3];
    for k in 0..3 {
        f[k] = ip(&grid, w, &h, &dirs[k]);
        dir_norms[k] = ip(&grid, w, &dirs[k], &dirs[k]).max(0.0).sqrt();
        for j in 0..3 {
            jac[k][j] = ip(&grid, w, &dh[j], &dirs[k]) + ip(&grid, w, &h, &ddirs[k][j]);
        }
    }
    let h_norm = ip(&grid, w, &h, &h).max(0.0).sqrt();
    let g_norm = ip(&grid, w, &g, &g).max(0.0).sqrt();
    Point {
        h,
        dirs,
        jac,
        f,
        dir_norms,
        h_norm,
        g_norm,
    }
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let rows: Vec<Vec<f64>> = a.iter().map(|r| r.to_vec()).collect();
    least_squares(&rows, &b).ok().map(|x| [x[0], x[1], x[2]])
}

fn relative_defects(pt: &Point) -> [f64; 3] {
    let scale = pt.h_norm.max(DEFECT_FLOOR * pt.g_norm);
    let mut d = [0.0; 3];
    for k in 0..3 {
        d[k] = if pt.dir_norms[k] * scale > 0.0 {
            pt.f[k].abs() / (pt.dir_norms[k] * scale)
        } else {
            0.0
        };
    }
    d
}

/// Decompose a lab-frame function.
pub fn decompose(
    u: &GraphFunction,
    guess: Params,
    exp: &ProfileExpansion,
    opts: DecomposeOptions,
) -> Result<ModulationState, ModulationError> {
    decompose_in_frame(u, Params::identity(), guess, exp, opts)
}

/// Decompose `Θ_{frame} v`, where `v` is sampled in the rescaled variables
/// of `frame`. The lab frame is `frame = Params::identity()`.
pub fn decompose_in_frame(
    v: &GraphFunction,
    frame: Params,
    guess: Params,
    exp: &ProfileExpansion,
    opts: DecomposeOptions,
) -> Result<ModulationState, ModulationError> {
    if !(guess.lambda > 0.0) {
        return Err(ModulationError::NonPositiveLambda(guess.lambda));
    }
    if v.grid().n_edges != exp.grid.n_edges {
        return Err(GraphError::GridMismatch.into());
    }
    let w = simpson(&exp.grid);
    let coverage = |pi: Params| -> Result<(), ModulationError> {
        let needed = pi.lambda / frame.lambda * exp.grid.l_max;
        let available = v.grid().l_max * (1.0 + opts.coverage_slack);
        if needed > available {
            Err(ModulationError::GridCoverage { needed, available })
        } else {
            Ok(())
        }
    };
    coverage(guess)?;
    let q_norm = (exp.grid.n_edges as f64
        * exp.q.iter().zip(&w).map(|(q, w)| q * q * w).sum::<f64>())
    .sqrt();
    let mut pi = guess;
    let mut pt = evaluate(v, frame, pi, exp, &w);
    let tube_distance = pt.h_norm / q_norm;
    if !(tube_distance <= opts.tube) {
        return Err(ModulationError::OutsideTube(tube_distance));
    }
    for it in 0..opts.max_iter {
        let step = solve3(pt.jac, pt.f).ok_or(ModulationError::SingularJacobian)?;
        let mut t = 1.0;
        // keep λ positive and the relative λ change moderate
        while (step[2] * t).abs() > 0.5 * pi.lambda {
            t *= 0.5;
        }
        let next = Params {
            theta: pi.theta - t * step[0],
            b: pi.b - t * step[1],
            lambda: pi.lambda - t * step[2],
        };
        coverage(next)?;
        let size = (t * step[0])
            .abs()
            .max((t * step[1]).abs())
            .max((t * step[2]).abs() / pi.lambda);
        pi = next;
        pt = evaluate(v, frame, pi, exp, &w);
        // a step at rounding level means the defects are at rounding level too
        if (size <= 1e-9 && relative_defects(&pt).iter().all(|d| *d <= opts.tol))
            || size <= STAGNATION_STEP
        {
            return Ok(finish(pi, pt, it + 1, tube_distance, exp));
        }
    }
    Err(ModulationError::NewtonDivergence(opts.max_iter))
}

fn finish(
    pi: Params,
    pt: Point,
    iterations: usize,
    tube_distance: f64,
    exp: &ProfileExpansion,
) -> ModulationState {
    let defects = relative_defects(&pt);
    let h = to_function(exp.grid, pt.h).expect("edge count matches the profile grid");
    ModulationState {
        params: pi,
        h,
        defects,
        iterations,
        tube_distance,
    }
}

/// Modulation Jacobian `∂F_k/∂π_j` (rows `y²P`, `iΛP`, `iρ`; columns
/// `θ, b, λ`) at `pi` for the frame representation `v`.
pub fn jacobian(
    v: &GraphFunction,
    frame: Params,
    pi: Params,
    exp: &ProfileExpansion,
) -> [[f64; 3]; 3] {
    evaluate(v, frame, pi, exp, &simpson(&exp.grid)).jac
}

/// Remove from `h` its components along `y²P`, `iΛP`, `iρ` at `pi`.
pub fn orthogonalize(
    h: &GraphFunction,
    pi: Params,
    exp: &ProfileExpansion,
) -> Result<GraphFunction, ModulationError> {
    project_out(h, pi, exp, false)
}

/// [`orthogonalize`] that also removes the component along `P`, the
/// direction controlled by mass conservation.
pub fn orthogonalize_with_mass(
    h: &GraphFunction,
    pi: Params,
    exp: &ProfileExpansion,
) -> Result<GraphFunction, ModulationError> {
    project_out(h, pi, exp, true)
}

fn project_out(
    h: &GraphFunction,
    pi: Params,
    exp: &ProfileExpansion,
    with_mass: bool,
) -> Result<GraphFunction, ModulationError> {
    let grid = exp.grid;
    if *h.grid() != grid {
        return Err(GraphError::GridMismatch.into());
    }
    let w = simpson(&grid);
    // evaluated at the profile itself, so only the directions are used
    let p = GraphFunction::radial(grid, exp.profile_values(pi.b, pi.lambda));
    let pt = evaluate(&p, pi, pi, exp, &w);
    let mut dirs: Vec<Edges> = pt.dirs.to_vec();
    if with_mass {
        dirs.push(p.stored_edges().to_vec());
    }
    let he: Edges = h.stored_edges().to_vec();
    let gram: Vec<Vec<f64>> = dirs
        .iter()
        .map(|dk| dirs.iter().map(|dj| ip(&grid, &w, dj, dk)).collect())
        .collect();
    let rhs: Vec<f64> = dirs.iter().map(|dk| ip(&grid, &w, &he, dk)).collect();
    let c = least_squares(&gram, &rhs).map_err(|_| ModulationError::SingularJacobian)?;
    let mut out = he;
    for (k, d) in dirs.iter().enumerate() {
        out = sub_edges(&out, &map_edges(d, |_, z| z * c[k]));
    }
    Ok(to_function(grid, out)?)
}

/// `Mod(s) = (b + λ_s/λ, b_s + b² − α, 1 − θ_s)` at one interior state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModRecord {
    pub s: f64,
    pub scale: f64,
    pub law: f64,
    pub phase: f64,
    pub norm: f64,
}

/// Centered-difference `Mod(s)` for a uniformly spaced sequence of `(s, π)`.
pub fn mod_vector(
    states: &[(f64, Params)],
    exp: &ProfileExpansion,
) -> Result<Vec<ModRecord>, ModulationError> {
    mod_vector_with(states, |b, l| exp.alpha(b, l))
}

/// [`mod_vector`] with an explicit `α(b, λ)`.
pub fn mod_vector_with(
    states: &[(f64, Params)],
    alpha: impl Fn(f64, f64) -> f64,
) -> Result<Vec<ModRecord>, ModulationError> {
    if states.len() < 3 {
        return Err(ModulationError::InsufficientData {
            got: states.len(),
            need: 3,
        });
    }
    let ds = states[1].0 - states[0].0;
    if ds == 0.0
        || states
            .windows(2)
            .any(|p| ((p[1].0 - p[0].0) - ds).abs() > 1e-9 * ds.abs().max(1e-12))
    {
        return Err(ModulationError::NonUniform);
    }
    Ok(states
        .windows(3)
        .map(|win| {
            let (s, p) = win[1];
            let (a, c) = (win[0].1, win[2].1);
            let lambda_s = (c.lambda - a.lambda) / (2.0 * ds);
            let b_s = (c.b - a.b) / (2.0 * ds);
            let theta_s = (c.theta - a.theta) / (2.0 * ds);
            let scale = p.b + lambda_s / p.lambda;
            let law = b_s + p.b * p.b - alpha(p.b, p.lambda);
            let phase = 1.0 - theta_s;
            ModRecord {
                s,
                scale,
                law,
                phase,
                norm: (scale * scale + law * law + phase * phase).sqrt(),
            }
        })
        .collect())
}

/// Energy-virial diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirialReport {
    /// `H(s, h)`.
    pub h_value: f64,
    /// `H/λ^m`.
    pub s_value: f64,
    /// `‖h‖_λ`.
    pub norm_lambda: f64,
    pub h1: f64,
    pub yh_l2: f64,
}

/// `H(s,h) = ½‖h‖²_{H¹} + (λ/2)‖yh‖² − ∫[F(P+h) − F(P) − dF(P)h] + (γλ/2)|h(0)|²`
/// with `F(u) = |u|⁶/6`, and `S = H/λ^m`.
pub fn virial_diagnostic(
    pi: Params,
    h: &GraphFunction,
    exp: &ProfileExpansion,
    m: i32,
) -> Result<VirialReport, ModulationError> {
    let grid = exp.grid;
    if *h.grid() != grid {
        return Err(GraphError::GridMismatch.into());
    }
    let w = simpson(&grid);
    let p = exp.profile_values(pi.b, pi.lambda);
    let he: Edges = h.stored_edges().to_vec();
    let dh: Edges = he.iter().map(|e| derivative(e, grid.h())).collect();
    let nl: Edges = he
        .iter()
        .map(|e| {
            e.iter()
                .zip(&p)
                .map(|(hv, pv)| {
                    let u = pv + hv;
                    let f = |z: C64| z.norm_sqr().powi(3) / 6.0;
                    C64::new(
                        f(u) - f(*pv) - pv.norm_sqr().powi(2) * (pv * hv.conj()).re,
                        0.0,
                    )
                })
                .collect()
        })
        .collect();
    let one: Edges = radial(vec![C64::new(1.0, 0.0); grid.n_points]);
    let l2 = ip(&grid, &w, &he, &he);
    let d2 = ip(&grid, &w, &dh, &dh);
    let yh = map_edges(&he, |k, z| z * grid.y(k));
    let y2 = ip(&grid, &w, &yh, &yh);
    let nonlinear = ip(&grid, &w, &nl, &one);
    let h0 = he.iter().map(|e| e[0].norm_sqr()).sum::<f64>() / he.len() as f64;
    let h1_sq = l2 + d2;
    let value = 0.5 * h1_sq + 0.5 * pi.lambda * y2 - nonlinear + 0.5 * exp.gamma * pi.lambda * h0;
    Ok(VirialReport {
        h_value: value,
        s_value: value / pi.lambda.powi(m),
        norm_lambda: (h1_sq + pi.lambda * y2).max(0.0).sqrt(),
        h1: h1_sq.max(0.0).sqrt(),
        yh_l2: y2.max(0.0).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ground_state;
    use crate::linearized::Linearized;
    use crate::profile::build_with;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::OnceLock;

    fn grid() -> GraphGrid {
        GraphGrid::new(2, 20.0, 2001).unwrap()
    }

    fn lin() -> &'static Linearized {
        static L: OnceLock<Linearized> = OnceLock::new();
        L.get_or_init(|| Linearized::new(grid()).unwrap())
    }

    fn exp(gamma: f64) -> &'static ProfileExpansion {
        static E0: OnceLock<ProfileExpansion> = OnceLock::new();
        static E1: OnceLock<ProfileExpansion> = OnceLock::new();
        let cell = if gamma == 0.0 { &E0 } else { &E1 };
        cell.get_or_init(|| build_with(3, gamma, lin()).unwrap())
    }

    fn lab_for(lambda: f64) -> GraphGrid {
        GraphGrid::new(2, 1.1 * lambda * 20.0, 3001).unwrap()
    }

    fn bump(g: GraphGrid, rng: &mut ChaCha8Rng) -> GraphFunction {
        let (a, c, k) = (
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.0..3.0),
            rng.gen_range(-2.0..2.0),
        );
        let ph = rng.gen_range(0.0..2.0 * PI);
        GraphFunction::from_fn(g, move |y| {
            C64::from_polar((-(y - c).powi(2) / a).exp(), ph + k * y)
        })
    }

    #[test]
    fn synthesize_trivial_and_unitary() {
        let e = exp(0.0);
        let zero = GraphFunction::zeros(e.grid);
        let u = synthesize(Params::identity(), &zero, e, e.grid).unwrap();
        for (a, q) in u.values().iter().zip(&e.q) {
            assert!((a - q).norm() < 1e-14);
        }
        let e = exp(-1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = bump(e.grid, &mut rng).scale(C64::new(0.01, 0.0));
        let pi = Params::new(0.7, 0.04, 0.02);
        let lab = GraphGrid::new(2, pi.lambda * 20.0, 8001).unwrap();
        let u = synthesize(pi, &h, e, lab).unwrap();
        let resc = GraphFunction::radial(e.grid, e.profile_values(pi.b, pi.lambda)).add(&h);
        let n_lab = crate::graph::norms(&u).l2;
        let n_res = crate::graph::norms(&resc).l2;
        assert!((n_lab - n_res).abs() < 1e-10 * n_res, "{n_lab} {n_res}");
        assert!(matches!(
            synthesize(pi, &h, e, GraphGrid::new(2, 0.1, 100).unwrap()),
            Err(ModulationError::GridCoverage { .. })
        ));
    }

    #[test]
    fn exact_inverse_point() {
        let e = exp(-1.0);
        let pi = Params::new(0.3, 0.05, 0.01);
        let lab = lab_for(pi.lambda);
        let u = synthesize(pi, &GraphFunction::zeros(e.grid), e, lab).unwrap();
        let st = decompose(
            &u,
            Params::new(0.31, 0.048, 0.0104),
            e,
            DecomposeOptions::default(),
        )
        .unwrap();
        assert!((st.params.theta - pi.theta).abs() < 1e-8);
        assert!((st.params.b - pi.b).abs() < 1e-8);
        assert!((st.params.lambda - pi.lambda).abs() < 1e-8 * pi.lambda);
    }

    #[test]
    fn jacobian_zero_pattern_at_ground_state() {
        let e = exp(0.0);
        let q = GraphFunction::radial(e.grid, e.profile_values(0.0, 1.0));
        let j = jacobian(&q, Params::identity(), Params::identity(), e);
        let yq = ground_state::yq_sq_graph(2);
        let tol = 1e-6;
        assert!(j[0][0].abs() < tol && j[0][1].abs() < tol);
        assert!(j[1][0].abs() < tol && j[1][2].abs() < tol);
        assert!(j[2][2].abs() < tol);
        assert!((j[0][2] + yq).abs() < 1e-6);
        assert!((j[1][1] + yq / 4.0).abs() < 1e-6);
        assert!((j[2][0] + yq / 2.0).abs() < 1e-6);
        let y2q_rho: f64 = crate::graph::integrate_real(
            &e.grid,
            &(0..e.grid.n_points)
                .map(|i| e.grid.y(i).powi(2) * e.q[i] * e.rho[i])
                .collect::<Vec<_>>(),
        );
        assert!((j[2][1] - y2q_rho / 4.0).abs() < 1e-6);
    }

    #[test]
    fn randomized_round_trips() {
        let e = exp(-1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let pi = Params::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(0.005..0.05),
            );
            let raw = bump(e.grid, &mut rng);
            let h0 = orthogonalize(&raw, pi, e).unwrap();
            let nh = crate::graph::norms(&h0).l2;
            let h = h0.scale(C64::new(1e-3 / nh, 0.0));
            let lab = GraphGrid::new(2, pi.lambda * 20.0, 4001).unwrap();
            let u = synthesize(pi, &h, e, lab).unwrap();
            let guess = Params::new(pi.theta + 0.02, pi.b * 1.05 + 0.002, pi.lambda * 1.03);
            let st = decompose(&u, guess, e, DecomposeOptions::default()).unwrap();
            assert!((st.params.theta - pi.theta).abs() < 1e-6);
            assert!((st.params.b - pi.b).abs() < 1e-6);
            assert!((st.params.lambda / pi.lambda - 1.0).abs() < 1e-6);
            let err = crate::graph::norms(&st.h.sub(&h)).l2;
            assert!(err < 1e-8, "{err}");
            assert!(st.defects.iter().all(|d| *d <= 1e-9), "{:?}", st.defects);
        }
    }

    #[test]
    fn equivariance() {
        let e = exp(-1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pi = Params::new(0.2, 0.03, 0.015);
        let h = orthogonalize(&bump(e.grid, &mut rng), pi, e)
            .unwrap()
            .scale(C64::new(2e-3, 0.0));
        let lab = lab_for(pi.lambda);
        let u = synthesize(pi, &h, e, lab).unwrap();
        let guess = Params::new(0.21, 0.031, 0.0152);
        let base = decompose(&u, guess, e, DecomposeOptions::default()).unwrap();
        let phi = 1.1;
        let rot = u.scale(C64::from_polar(1.0, phi));
        let st = decompose(
            &rot,
            Params {
                theta: guess.theta + phi,
                ..guess
            },
            e,
            DecomposeOptions::default(),
        )
        .unwrap();
        assert!((st.params.theta - base.params.theta - phi).abs() < 1e-10);
        assert!((st.params.b - base.params.b).abs() < 1e-10);
        assert!((st.params.lambda - base.params.lambda).abs() < 1e-10 * base.params.lambda);
        assert!(crate::graph::norms(&st.h.sub(&base.h)).l2 < 1e-10);
        // the same function written in the frame (φ, 0, λ₂): exact samples on the λ₂-scaled grid
        let l2 = 0.37;
        let frame = Params::new(phi, 0.0, l2);
        let fg = GraphGrid::new(2, lab.l_max / l2, lab.n_points).unwrap();
        let v = GraphFunction::radial(
            fg,
            u.values()
                .iter()
                .map(|z| z * l2.sqrt() * C64::from_polar(1.0, -phi))
                .collect(),
        );
        let st = decompose_in_frame(&v, frame, guess, e, DecomposeOptions::default()).unwrap();
        assert!((st.params.lambda / base.params.lambda - 1.0).abs() < 1e-10);
        assert!((st.params.b - base.params.b).abs() < 1e-10);
        assert!((st.params.theta - base.params.theta).abs() < 1e-10);
        assert!(crate::graph::norms(&st.h.sub(&base.h)).l2 < 1e-10);
    }

    #[test]
    fn literal_scaling_equivariance_without_vertex_coupling() {
        let e = exp(0.0);
        let pi = Params::new(-0.4, 0.02, 0.012);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = orthogonalize(&bump(e.grid, &mut rng), pi, e)
            .unwrap()
            .scale(C64::new(1e-3, 0.0));
        let lab = lab_for(pi.lambda);
        let u = synthesize(pi, &h, e, lab).unwrap();
        let guess = Params::new(-0.41, 0.021, 0.0122);
        let base = decompose(&u, guess, e, DecomposeOptions::default()).unwrap();
        let l2 = 0.37;
        let lab2 = GraphGrid::new(2, lab.l_max * l2, lab.n_points).unwrap();
        let scaled =
            GraphFunction::radial(lab2, u.values().iter().map(|z| z / l2.sqrt()).collect());
        let st = decompose(
            &scaled,
            Params {
                lambda: guess.lambda * l2,
                ..guess
            },
            e,
            DecomposeOptions::default(),
        )
        .unwrap();
        assert!((st.params.lambda / (base.params.lambda * l2) - 1.0).abs() < 1e-10);
        assert!((st.params.b - base.params.b).abs() < 1e-10);
        assert!((st.params.theta - base.params.theta).abs() < 1e-10);
    }

    #[test]
    fn tube_and_divergence_errors() {
        let e = exp(-1.0);
        let lab = lab_for(0.01);
        let far = GraphFunction::from_real_fn(lab, |x| 5.0 * (-x * x).exp());
        assert!(matches!(
            decompose(
                &far,
                Params::new(0.0, 0.0, 0.01),
                e,
                DecomposeOptions::default()
            ),
            Err(ModulationError::OutsideTube(_))
        ));
        let u = synthesize(
            Params::new(0.0, 0.0, 0.01),
            &GraphFunction::zeros(e.grid),
            e,
            lab,
        )
        .unwrap();
        let opts = DecomposeOptions {
            max_iter: 1,
            ..Default::default()
        };
        assert!(matches!(
            decompose(&u, Params::new(0.1, 0.01, 0.011), e, opts),
            Err(ModulationError::NewtonDivergence(1))
        ));
    }

    #[test]
    fn mod_vector_on_model_trajectory() {
        let beta = 2.0;
        let ds = 1e-2;
        let states: Vec<(f64, Params)> = (0..50)
            .map(|i| {
                let s = 20.0 + i as f64 * ds;
                (s, Params::new(s, 2.0 / s, 2.0 / (beta * s * s)))
            })
            .collect();
        let m = mod_vector_with(&states, |_, l| beta * l).unwrap();
        assert_eq!(m.len(), 48);
        assert!(m.iter().all(|r| r.norm < 1e-7), "{:?}", m[0]);
        assert!(matches!(
            mod_vector_with(&states[..2], |_, _| 0.0),
            Err(ModulationError::InsufficientData { .. })
        ));
    }

    #[test]
    fn virial_zero_quadratic_limit_and_coercivity() {
        let e = exp(0.0);
        let pi = Params::new(0.0, 0.0, 0.01);
        let zero = GraphFunction::zeros(e.grid);
        assert_eq!(virial_diagnostic(pi, &zero, e, 4).unwrap().h_value, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = e.grid;
        let h = orthogonalize(&bump(g, &mut rng), pi, e).unwrap();
        let he = h.edge(0).to_vec();
        let dh = derivative(&he, g.h());
        let q4: Vec<f64> = e.q.iter().map(|q| q.powi(4)).collect();
        let integrand: Vec<f64> = (0..g.n_points)
            .map(|i| {
                let (h1, h2) = (he[i].re, he[i].im);
                0.5 * (dh[i].norm_sqr() + he[i].norm_sqr()
                    - 5.0 * q4[i] * h1 * h1
                    - q4[i] * h2 * h2)
                    + 0.5 * pi.lambda * g.y(i).powi(2) * he[i].norm_sqr()
            })
            .collect();
        let quad = crate::graph::integrate_real(&g, &integrand);
        let at = |eps: f64| {
            virial_diagnostic(pi, &h.scale(C64::new(eps, 0.0)), e, 4)
                .unwrap()
                .h_value
                / (eps * eps)
        };
        let (a, b) = (at(1e-3), at(5e-4));
        let extrapolated = 2.0 * b - a;
        assert!(
            (extrapolated - quad).abs() < 1e-6 * quad.abs().max(1.0),
            "{extrapolated} {quad}"
        );
        // coercivity on orthogonalized random directions at ‖h‖_λ = 1e−3
        let mut k0 = f64::INFINITY;
        for _ in 0..20 {
            let h = orthogonalize_with_mass(&bump(g, &mut rng), pi, e).unwrap();
            let n = virial_diagnostic(pi, &h, e, 4).unwrap().norm_lambda;
            let hs = h.scale(C64::new(1e-3 / n, 0.0));
            let r = virial_diagnostic(pi, &hs, e, 4).unwrap();
            k0 = k0.min((r.h_value + 1e-12) / r.norm_lambda.powi(2));
        }
        assert!(k0 > 0.0, "k0 = {k0}");
    }

    #[test]
    fn norm_lambda_equivalence() {
        let e = exp(-1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = bump(e.grid, &mut rng);
        let lambda = 0.02;
        let r = virial_diagnostic(Params::new(0.0, 0.0, lambda), &h, e, 2).unwrap();
        let lmax = e.grid.l_max;
        assert!(r.h1.powi(2) <= r.norm_lambda.powi(2));
        assert!(r.norm_lambda.powi(2) <= (1.0 + lambda * lmax * lmax) * r.h1.powi(2));
    }
}
