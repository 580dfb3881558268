//! End-to-end pipelines: configurable simulations, the constructed blow-up
//! run, the pseudo-conformal solver verification, the mass-threshold scan and
//! the residual-order sweep.

use crate::evolution::{
    fit_rate, lab_diagnostics, relative_l2_error, rescaled_to_lab, run_lab, run_rescaled,
    EvolutionError, RateFit, RescaledOptions, RescaledState, RunStatus, Scheme, SnapshotRecord,
};
use crate::fit::{line_fit, FitError};
use crate::graph::{GraphError, GraphFunction, GraphGrid, C64};
use crate::ground_state::{self, pseudo_conformal, GroundStateError};
use crate::model_ode::{self, final_data, FinalData, FinalDataOptions, ModelError};
use crate::modulation::{synthesize, DecomposeOptions, ModulationError, Params};
use crate::profile::{build_expansion, shift_fit, ProfileError, ProfileExpansion, ShiftFit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Modulation(#[from] ModulationError),
    #[error(transparent)]
    GroundState(#[from] GroundStateError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

impl ExperimentError {
    /// Configuration problems as opposed to numerical failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ExperimentError::InvalidConfig(_)
                | ExperimentError::Graph(GraphError::InvalidGrid(_))
                | ExperimentError::Evolution(EvolutionError::InvalidConfig(_))
                | ExperimentError::Profile(ProfileError::InvalidKappa(_))
                | ExperimentError::Model(ModelError::InvalidArgument(_))
        )
    }
}

/// `(b, λ)` samples around the model trajectory used to fit the energy shift.
pub fn shift_samples(beta: f64) -> Vec<(f64, f64)> {
    (40..=160)
        .step_by(20)
        .flat_map(|s| {
            [0.8, 1.0, 1.25].map(|f| {
                (
                    f * model_ode::b_mo(s as f64),
                    model_ode::lambda_mo(s as f64, beta),
                )
            })
        })
        .collect()
}

/// Final data for the constructed solution, optionally with the fitted
/// energy shift removed from the target energy inside `𝓕`.
pub fn constructed_final_data(
    exp: &mut ProfileExpansion,
    s1: f64,
    e_star: f64,
    use_shift: bool,
) -> Result<(FinalData, Option<ShiftFit>), ExperimentError> {
    if exp.gamma >= 0.0 {
        return Err(ExperimentError::InvalidConfig(format!(
            "final data needs γ < 0, got {}",
            exp.gamma
        )));
    }
    let beta = exp.beta;
    let shift = if use_shift {
        Some(shift_fit(exp, &shift_samples(beta))?)
    } else {
        None
    };
    let c_q = exp.c_q;
    let expansion: &ProfileExpansion = exp;
    let energy = |b: f64, l: f64| {
        expansion
            .energy(b, l, 0.0)
            .map(|e| e.e_tilde / c_q)
            .map_err(|e| e.to_string())
    };
    let opts = FinalDataOptions {
        energy_shift: shift.as_ref().map(|s| s.model_shift),
        ..Default::default()
    };
    let fd = final_data(s1, e_star, c_q, beta, &energy, opts)?;
    Ok((fd, shift))
}

/// Initial data of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `A e^{−x²/w²}` on every edge, rescaled to `mass` when given.
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        mass: Option<f64>,
    },
    /// The pseudo-conformal solution at `t_start`.
    PseudoConformal,
    /// The ground state `Q` on every edge.
    GroundState,
    /// `λ^{−1/2} e^{iθ − ibx²/(4λ²)} P_{b,λ}(x/λ)`.
    Profile { theta: f64, b: f64, lambda: f64 },
    /// Final data at `s₁ = t_start` for the target energy `E*` (rescaled frame).
    FinalData {
        #[serde(default)]
        e_star: f64,
        #[serde(default = "default_true")]
        energy_shift: bool,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    #[default]
    Lab,
    Rescaled,
}

/// A single simulation. In the rescaled frame `dt`, `t_start` and `t_end`
/// are measured in the rescaled time `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub gamma: f64,
    pub grid: GraphGrid,
    #[serde(default)]
    pub frame: Frame,
    #[serde(default)]
    pub scheme: Scheme,
    /// Step magnitude; the direction follows `t_end − t_start`.
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub initial: InitialCondition,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    /// Blow-up flag when the sup norm exceeds this multiple of its initial value.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
    /// Amplitude of the seeded smooth perturbation added to the initial data.
    #[serde(default)]
    pub noise: f64,
    /// Profile order for profile-based data and rescaled runs.
    #[serde(default = "default_kappa")]
    pub kappa: usize,
    #[serde(default = "default_reproject")]
    pub reproject_every: usize,
}

fn default_snapshot_every() -> usize {
    100
}

fn default_threshold() -> f64 {
    50.0
}

fn default_kappa() -> usize {
    3
}

fn default_reproject() -> usize {
    1
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.grid.validate()?;
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.threshold > 1.0) {
            return bad(format!("threshold must exceed 1, got {}", self.threshold));
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite()) || self.t_start == self.t_end {
            return bad("t_start and t_end must be finite and distinct".into());
        }
        if self.snapshot_every == 0 || self.reproject_every == 0 {
            return bad("snapshot_every and reproject_every must be positive".into());
        }
        if !(self.gamma.is_finite() && self.noise.is_finite()) {
            return bad("gamma and noise must be finite".into());
        }
        match (&self.frame, &self.initial) {
            (
                Frame::Rescaled,
                InitialCondition::Profile { .. } | InitialCondition::FinalData { .. },
            ) => Ok(()),
            (Frame::Rescaled, _) => bad(
                "the rescaled frame starts from profile or final_data initial conditions".into(),
            ),
            (Frame::Lab, InitialCondition::FinalData { .. }) => {
                bad("final_data initial conditions need the rescaled frame".into())
            }
            _ => Ok(()),
        }
    }
}

/// Output of [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub snapshots: Vec<SnapshotRecord>,
    pub status: RunStatus,
    pub final_time: f64,
    pub max_mass_drift: f64,
    pub max_energy_drift: f64,
    /// Largest `‖h‖_λ` (rescaled runs).
    pub max_h_lambda: Option<f64>,
    /// The expansion used, for hashing.
    pub expansion: Option<ProfileExpansion>,
    pub final_data: Option<FinalData>,
}

/// Smooth seeded perturbation vanishing at the vertex.
fn perturbation(grid: GraphGrid, seed: u64, amplitude: f64, radial: bool) -> GraphFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = if radial { 1 } else { grid.n_edges };
    let data: Vec<Vec<C64>> = (0..edges)
        .map(|_| {
            let terms: Vec<(C64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                        rng.gen_range(0.5..3.0),
                        rng.gen_range(0.3..1.0),
                    )
                })
                .collect();
            (0..grid.n_points)
                .map(|i| {
                    let x = grid.y(i);
                    terms
                        .iter()
                        .map(|&(a, c, w)| a * (x / w).powi(2) * (-((x - c) / w).powi(2)).exp())
                        .sum::<C64>()
                        * amplitude
                })
                .collect()
        })
        .collect();
    if radial {
        GraphFunction::radial(grid, data.into_iter().next().unwrap_or_default())
    } else {
        GraphFunction::from_edges(grid, data).expect("one sequence per edge")
    }
}

fn lab_initial(
    cfg: &SimConfig,
) -> Result<(GraphFunction, Option<ProfileExpansion>), ExperimentError> {
    let grid = cfg.grid;
    let u = match cfg.initial {
        InitialCondition::Gaussian {
            amplitude,
            width,
            mass,
        } => {
            if !(width > 0.0) {
                return Err(ExperimentError::InvalidConfig(format!(
                    "gaussian width must be positive, got {width}"
                )));
            }
            let u = GraphFunction::from_fn(grid, |x| {
                C64::new(amplitude * (-(x / width).powi(2)).exp(), 0.0)
            });
            match mass {
                Some(m) => {
                    let m0 = lab_diagnostics(&u, cfg.gamma).mass;
                    if !(m >= 0.0 && m0 > 0.0) {
                        return Err(ExperimentError::InvalidConfig(format!(
                            "cannot rescale mass {m0} to {m}"
                        )));
                    }
                    u.scale(C64::new((m / m0).sqrt(), 0.0))
                }
                None => u,
            }
        }
        InitialCondition::PseudoConformal => pseudo_conformal(cfg.t_start, grid)?,
        InitialCondition::GroundState => GraphFunction::from_real_fn(grid, ground_state::q),
        InitialCondition::Profile { theta, b, lambda } => {
            let exp = build_expansion(cfg.kappa, cfg.gamma, GraphGrid::standard(grid.n_edges)?)?;
            let h = GraphFunction::zeros(exp.grid);
            let u = synthesize(Params::new(theta, b, lambda), &h, &exp, grid)?;
            return Ok((add_noise(u, cfg), Some(exp)));
        }
        InitialCondition::FinalData { .. } => unreachable!("rejected by validate"),
    };
    Ok((add_noise(u, cfg), None))
}

fn add_noise(u: GraphFunction, cfg: &SimConfig) -> GraphFunction {
    if cfg.noise == 0.0 {
        return u;
    }
    let p = perturbation(*u.grid(), cfg.seed, cfg.noise, u.is_radial());
    if u.is_radial() {
        u.add(&p)
    } else {
        u.add(&p.to_full())
    }
}

/// Run one simulation described by `cfg`.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput, ExperimentError> {
    cfg.validate()?;
    match cfg.frame {
        Frame::Lab => {
            let (u0, expansion) = lab_initial(cfg)?;
            let run = run_lab(
                &u0,
                cfg.gamma,
                cfg.scheme,
                (cfg.t_start, cfg.t_end),
                cfg.dt,
                cfg.snapshot_every,
                cfg.threshold,
            )?;
            Ok(SimOutput {
                snapshots: run.snapshots,
                status: run.status,
                final_time: run.final_time,
                max_mass_drift: run.max_mass_drift,
                max_energy_drift: run.max_energy_drift,
                max_h_lambda: None,
                expansion,
                final_data: None,
            })
        }
        Frame::Rescaled => {
            let mut exp = build_expansion(cfg.kappa, cfg.gamma, cfg.grid)?;
            let (params, t0, fd) = match cfg.initial {
                InitialCondition::Profile { theta, b, lambda } => {
                    (Params::new(theta, b, lambda), 0.0, None)
                }
                InitialCondition::FinalData {
                    e_star,
                    energy_shift,
                } => {
                    let (fd, _) =
                        constructed_final_data(&mut exp, cfg.t_start, e_star, energy_shift)?;
                    (Params::new(0.0, fd.b1, fd.lambda1), fd.t1, Some(fd))
                }
                _ => unreachable!("rejected by validate"),
            };
            let mut v = exp.profile_values(params.b, params.lambda);
            if cfg.noise != 0.0 {
                let p = perturbation(exp.grid, cfg.seed, cfg.noise, true);
                for (a, b) in v.iter_mut().zip(p.values()) {
                    *a += b;
                }
            }
            let start = RescaledState {
                s: cfg.t_start,
                t: t0,
                params,
                v,
            };
            let opts = RescaledOptions {
                ds: cfg.dt,
                reproject_every: cfg.reproject_every,
                decompose: DecomposeOptions::default(),
            };
            let run = run_rescaled(&exp, start, cfg.t_end, opts, cfg.snapshot_every)?;
            let first = run.snapshots[0];
            let (mut dm, mut de) = (0.0f64, 0.0f64);
            for r in &run.snapshots {
                dm = dm.max((r.mass - first.mass).abs() / first.mass);
                de = de.max((r.energy - first.energy).abs() / (1.0 + first.energy.abs()));
            }
            Ok(SimOutput {
                final_time: run.final_state.s,
                snapshots: run.snapshots,
                status: run.status,
                max_mass_drift: dm,
                max_energy_drift: de,
                max_h_lambda: Some(run.max_h_lambda),
                expansion: Some(exp),
                final_data: fd,
            })
        }
    }
}

/// Residual `Ψ_κ` along the model trajectory and its log-log slope against
/// `b² + λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualOrder {
    pub kappa: usize,
    /// `(s, b, λ, b² + λ, ‖Ψ‖)`.
    pub samples: Vec<(f64, f64, f64, f64, f64)>,
    /// `None` when the residual vanishes identically (γ = 0).
    pub slope: Option<f64>,
}

pub fn residual_order(
    exp: &ProfileExpansion,
    s_values: &[f64],
) -> Result<ResidualOrder, ExperimentError> {
    if exp.gamma == 0.0 {
        return Ok(ResidualOrder {
            kappa: exp.kappa,
            samples: Vec::new(),
            slope: None,
        });
    }
    let mut samples = Vec::with_capacity(s_values.len());
    for &s in s_values {
        let (b, l) = (model_ode::b_mo(s), model_ode::lambda_mo(s, exp.beta));
        let r = exp.model_residual(b, l)?;
        samples.push((s, b, l, b * b + l, r.c1exp_norm));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .filter(|p| p.4 > 0.0)
        .map(|p| (p.3.ln(), p.4.ln()))
        .unzip();
    let slope = if xs.len() >= 2 {
        Some(line_fit(&xs, &ys)?.slope)
    } else {
        None
    };
    Ok(ResidualOrder {
        kappa: exp.kappa,
        samples,
        slope,
    })
}

/// RK4 integration of the model system against its closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub beta: f64,
    /// `(s, b, λ, b_closed, λ_closed, 𝓔_mo)`.
    pub rows: Vec<[f64; 6]>,
    /// Largest relative deviation of `b` or `λ` from the closed form.
    pub max_rel_error: f64,
    /// Largest drift of `𝓔_mo` relative to the size `b²/λ²` of its terms.
    pub energy_drift: f64,
}

pub fn model_comparison(
    beta: f64,
    start: model_ode::ModelState,
    s_end: f64,
    step: f64,
) -> Result<ModelComparison, ExperimentError> {
    let traj = model_ode::integrate_model(start, s_end, step, beta)?;
    let e0 = start.energy(beta);
    let (mut err, mut drift) = (0.0f64, 0.0f64);
    let mut rows = Vec::with_capacity(traj.len());
    for st in &traj {
        let (bc, lc) = model_ode::closed_form(st.s, start.s, start.b, start.lambda, beta)?;
        err = err
            .max(((st.b - bc) / bc).abs())
            .max(((st.lambda - lc) / lc).abs());
        let e = st.energy(beta);
        drift = drift.max((e - e0).abs() / (st.b * st.b / (st.lambda * st.lambda)));
        rows.push([st.s, st.b, st.lambda, bc, lc, e]);
    }
    Ok(ModelComparison {
        beta,
        rows,
        max_rel_error: err,
        energy_drift: drift,
    })
}

/// Configuration of the constructed blow-up experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlowupConfig {
    pub gamma: f64,
    pub n_edges: usize,
    pub kappa: usize,
    pub l_max: f64,
    pub n_points: usize,
    /// Final rescaled time `s₁`.
    pub s1: f64,
    pub e_star: f64,
    pub energy_shift: bool,
    /// End of the backward run.
    pub s0: f64,
    /// End of the forward run.
    pub s_end: f64,
    pub ds: f64,
    pub snapshot_every: usize,
    /// Width of the fit window in decades of `|t − T*|`.
    pub fit_decades: f64,
}

impl Default for BlowupConfig {
    fn default() -> Self {
        Self {
            gamma: -1.0,
            n_edges: 2,
            kappa: 3,
            l_max: GraphGrid::DEFAULT_L_MAX,
            n_points: GraphGrid::DEFAULT_POINTS,
            s1: 60.0,
            e_star: 0.0,
            energy_shift: true,
            s0: 40.0,
            s_end: 200.0,
            ds: 0.05,
            snapshot_every: 10,
            fit_decades: 1.0,
        }
    }
}

/// Summary of the constructed blow-up experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub final_data: FinalData,
    pub shift: Option<ShiftFit>,
    pub beta: f64,
    pub backward_status: RunStatus,
    pub forward_status: Option<RunStatus>,
    /// Largest `‖h‖_{H¹}` on the backward run.
    pub backward_max_h_h1: f64,
    /// Largest `‖h‖_λ` over both runs.
    pub max_h_lambda: f64,
    /// Blow-up time from the last state and the model tail `λ ∝ s^{−2}`.
    pub t_star: Option<f64>,
    pub fit_window: Option<(f64, f64)>,
    pub lambda_fit: Option<RateFit>,
    pub b_fit: Option<RateFit>,
    pub grad_fit: Option<RateFit>,
    pub c_lambda: f64,
    pub c_b: f64,
    /// Slope of `log |Mod(s)|` against `log s` on the backward run.
    pub mod_slope: Option<f64>,
    pub failure: Option<String>,
}

/// Output of [`blowup_experiment`]; snapshots run in increasing `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlowupOutput {
    pub report: BlowupReport,
    pub snapshots: Vec<SnapshotRecord>,
    pub expansion: ProfileExpansion,
}

/// Final data → backward run to `s₀` → forward run to `s_end` → rate fits.
pub fn blowup_experiment(cfg: &BlowupConfig) -> Result<BlowupOutput, ExperimentError> {
    if !(cfg.s0 < cfg.s1
        && cfg.s1 < cfg.s_end
        && cfg.ds > 0.0
        && cfg.fit_decades > 0.0
        && cfg.snapshot_every > 0)
    {
        return Err(ExperimentError::InvalidConfig(
            "need s0 < s1 < s_end, ds > 0, fit_decades > 0, snapshot_every > 0".into(),
        ));
    }
    let grid = GraphGrid::new(cfg.n_edges, cfg.l_max, cfg.n_points)?;
    let mut exp = build_expansion(cfg.kappa, cfg.gamma, grid)?;
    let (fd, shift) = constructed_final_data(&mut exp, cfg.s1, cfg.e_star, cfg.energy_shift)?;
    let beta = exp.beta;
    let opts = RescaledOptions {
        ds: cfg.ds,
        reproject_every: 1,
        decompose: DecomposeOptions::default(),
    };
    let start = RescaledState {
        s: fd.s1,
        t: fd.t1,
        params: Params::new(0.0, fd.b1, fd.lambda1),
        v: exp.profile_values(fd.b1, fd.lambda1),
    };
    let back = run_rescaled(
        &exp,
        start,
        cfg.s0,
        RescaledOptions {
            ds: -cfg.ds,
            ..opts
        },
        cfg.snapshot_every,
    )?;
    let backward_max_h_h1 = back.snapshots.iter().map(|r| r.h_h1).fold(0.0, f64::max);
    let mod_slope = {
        let (xs, ys): (Vec<f64>, Vec<f64>) = back
            .snapshots
            .iter()
            .filter(|r| r.mod_norm.is_finite() && r.mod_norm > 0.0)
            .map(|r| (r.s.ln(), r.mod_norm.ln()))
            .unzip();
        if xs.len() >= 2 {
            line_fit(&xs, &ys).ok().map(|f| f.slope)
        } else {
            None
        }
    };
    let mut report = BlowupReport {
        final_data: fd,
        shift,
        beta,
        backward_status: back.status.clone(),
        forward_status: None,
        backward_max_h_h1,
        max_h_lambda: back.max_h_lambda,
        t_star: None,
        fit_window: None,
        lambda_fit: None,
        b_fit: None,
        grad_fit: None,
        c_lambda: model_ode::c_lambda(beta),
        c_b: model_ode::c_b(beta),
        mod_slope,
        failure: None,
    };
    let mut snapshots: Vec<SnapshotRecord> = back.snapshots.iter().rev().copied().collect();
    if back.status != RunStatus::Completed {
        report.failure = Some(format!("backward run stopped: {:?}", back.status));
        return Ok(BlowupOutput {
            report,
            snapshots,
            expansion: exp,
        });
    }
    let fwd = run_rescaled(
        &exp,
        back.final_state.clone(),
        cfg.s_end,
        opts,
        cfg.snapshot_every,
    )?;
    report.forward_status = Some(fwd.status.clone());
    report.max_h_lambda = report.max_h_lambda.max(fwd.max_h_lambda);
    snapshots.pop();
    snapshots.extend(fwd.snapshots.iter().copied());
    if fwd.status != RunStatus::Completed {
        report.failure = Some(format!("forward run stopped: {:?}", fwd.status));
    }
    let last = fwd.final_state;
    let t_star = last.t + last.params.lambda.powi(2) * last.s / 3.0;
    report.t_star = Some(t_star);
    let a = (last.t - t_star).abs();
    let window = (a, a * 10f64.powf(cfg.fit_decades));
    report.fit_window = Some(window);
    let fw: Vec<&SnapshotRecord> = fwd.snapshots.iter().collect();
    let t: Vec<f64> = fw.iter().map(|r| r.t).collect();
    let series = |f: fn(&SnapshotRecord) -> f64| -> Vec<f64> { fw.iter().map(|r| f(r)).collect() };
    let fit = |y: Vec<f64>| fit_rate(&t, &y, window, t_star);
    match (
        fit(series(|r| r.lambda)),
        fit(series(|r| r.b)),
        fit(series(|r| r.grad_norm)),
    ) {
        (Ok(l), Ok(b), Ok(g)) => {
            report.lambda_fit = Some(l);
            report.b_fit = Some(b);
            report.grad_fit = Some(g);
        }
        (l, b, g) => {
            let msg = [l.as_ref().err(), b.as_ref().err(), g.as_ref().err()]
                .into_iter()
                .flatten()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            report.lambda_fit = l.ok();
            report.b_fit = b.ok();
            report.grad_fit = g.ok();
            report
                .failure
                .get_or_insert(format!("rate fit failed: {msg}"));
        }
    }
    Ok(BlowupOutput {
        report,
        snapshots,
        expansion: exp,
    })
}

/// Verification of the lab solver against the pseudo-conformal solution (γ = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcConfig {
    pub grid: GraphGrid,
    pub scheme: Scheme,
    pub dt: f64,
    pub t0: f64,
    /// End of the accuracy check.
    pub t_check: f64,
    /// End of the run used for the gradient fit.
    pub t_end: f64,
    /// Window in `|t|` for the gradient-exponent fit.
    pub fit_window: (f64, f64),
    pub snapshot_every: usize,
    /// Number of error checkpoints on `[t0, t_check]`.
    pub checkpoints: usize,
    pub order: OrderConfig,
}

/// Convergence-order study against the pseudo-conformal solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrderConfig {
    pub l_max: f64,
    pub t_end: f64,
    /// Time steps, halving; errors against a run with `dt_reference` on the same grid.
    pub dt_values: Vec<f64>,
    pub dt_reference: f64,
    pub dt_points: usize,
    /// Grid sizes, doubling resolution; errors against the exact solution.
    pub h_points: Vec<usize>,
    pub h_dt: f64,
}

impl Default for PcConfig {
    fn default() -> Self {
        Self {
            grid: GraphGrid {
                n_edges: 2,
                l_max: 12.0,
                n_points: 24001,
            },
            scheme: Scheme::Conservative,
            dt: 1e-4,
            t0: -1.0,
            t_check: -0.2,
            t_end: -0.05,
            fit_window: (0.05, 0.2),
            snapshot_every: 10,
            checkpoints: 8,
            order: OrderConfig::default(),
        }
    }
}

impl Default for OrderConfig {
    fn default() -> Self {
        Self {
            l_max: 16.0,
            t_end: -0.5,
            dt_values: vec![4e-3, 2e-3, 1e-3],
            dt_reference: 1.25e-4,
            dt_points: 2001,
            h_points: vec![801, 1601, 3201],
            h_dt: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcReport {
    /// `(t, relative L² error)` at the checkpoints.
    pub errors: Vec<(f64, f64)>,
    pub max_error: f64,
    pub grad_fit: RateFit,
    /// Largest relative mass drift per unit time.
    pub mass_drift_rate: f64,
    /// Largest energy drift `/(1 + |E₀|)` per unit time.
    pub energy_drift_rate: f64,
    pub dt_errors: Vec<(f64, f64)>,
    pub dt_orders: Vec<f64>,
    pub h_errors: Vec<(f64, f64)>,
    pub h_orders: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcOutput {
    pub report: PcReport,
    pub snapshots: Vec<SnapshotRecord>,
}

fn orders(errors: &[(f64, f64)]) -> Vec<f64> {
    errors
        .windows(2)
        .map(|w| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln())
        .collect()
}

pub fn pseudo_conformal_study(cfg: &PcConfig) -> Result<PcOutput, ExperimentError> {
    if !(cfg.t0 < cfg.t_check && cfg.t_check <= cfg.t_end && cfg.t_end < 0.0 && cfg.checkpoints > 0)
    {
        return Err(ExperimentError::InvalidConfig(
            "need t0 < t_check <= t_end < 0 and checkpoints > 0".into(),
        ));
    }
    let grid = cfg.grid;
    grid.validate()?;
    let mut u = pseudo_conformal(cfg.t0, grid)?;
    let mut snapshots: Vec<SnapshotRecord> = Vec::new();
    let mut errors = Vec::new();
    let (mut mass_rate, mut energy_rate) = (0.0f64, 0.0f64);
    let span = (cfg.t_check - cfg.t0) / cfg.checkpoints as f64;
    let mut segments: Vec<(f64, f64)> = (0..cfg.checkpoints)
        .map(|k| (cfg.t0 + k as f64 * span, cfg.t0 + (k + 1) as f64 * span))
        .collect();
    if cfg.t_end > cfg.t_check {
        segments.push((cfg.t_check, cfg.t_end));
    }
    let m0 = lab_diagnostics(&u, 0.0);
    for (k, &(a, b)) in segments.iter().enumerate() {
        let run = run_lab(
            &u,
            0.0,
            cfg.scheme,
            (a, b),
            cfg.dt,
            cfg.snapshot_every,
            50.0,
        )?;
        if run.status != RunStatus::Completed {
            return Err(ExperimentError::InvalidConfig(format!(
                "pseudo-conformal run stopped at t = {}",
                run.final_time
            )));
        }
        if !snapshots.is_empty() {
            snapshots.pop();
        }
        snapshots.extend(run.snapshots.iter().copied());
        u = run.final_state;
        let t = b;
        let d = lab_diagnostics(&u, 0.0);
        let elapsed = t - cfg.t0;
        mass_rate = mass_rate.max((d.mass - m0.mass).abs() / m0.mass / elapsed);
        energy_rate =
            energy_rate.max((d.energy - m0.energy).abs() / (1.0 + m0.energy.abs()) / elapsed);
        mass_rate = mass_rate.max(run.max_mass_drift / (b - a));
        if k < cfg.checkpoints {
            errors.push((
                t,
                relative_l2_error(&u, &pseudo_conformal(t, grid)?, f64::INFINITY)?,
            ));
        }
    }
    let ts: Vec<f64> = snapshots.iter().map(|r| r.t).collect();
    let gs: Vec<f64> = snapshots.iter().map(|r| r.grad_norm).collect();
    let grad_fit = fit_rate(&ts, &gs, cfg.fit_window, 0.0)?;
    let o = &cfg.order;
    let exact_at = |g: GraphGrid| pseudo_conformal(o.t_end, g);
    let dt_grid = GraphGrid::new(2, o.l_max, o.dt_points)?;
    let solve = |g: GraphGrid, dt: f64| -> Result<GraphFunction, ExperimentError> {
        let run = run_lab(
            &pseudo_conformal(cfg.t0, g)?,
            0.0,
            cfg.scheme,
            (cfg.t0, o.t_end),
            dt,
            usize::MAX,
            50.0,
        )?;
        Ok(run.final_state)
    };
    let reference = solve(dt_grid, o.dt_reference)?;
    let mut dt_errors = Vec::new();
    for &dt in &o.dt_values {
        dt_errors.push((
            dt,
            relative_l2_error(&solve(dt_grid, dt)?, &reference, f64::INFINITY)?,
        ));
    }
    let mut h_errors = Vec::new();
    for &n in &o.h_points {
        let g = GraphGrid::new(2, o.l_max, n)?;
        h_errors.push((
            g.h(),
            relative_l2_error(&solve(g, o.h_dt)?, &exact_at(g)?, f64::INFINITY)?,
        ));
    }
    let max_error = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let report = PcReport {
        errors,
        max_error,
        grad_fit,
        mass_drift_rate: mass_rate,
        energy_drift_rate: energy_rate,
        dt_orders: orders(&dt_errors),
        dt_errors,
        h_orders: orders(&h_errors),
        h_errors,
    };
    Ok(PcOutput { report, snapshots })
}

/// Mass sweep with a fixed gaussian shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub gamma: f64,
    pub grid: GraphGrid,
    pub width: f64,
    /// Initial masses as multiples of `min{N/2, 1}‖Q‖²`.
    pub mass_fractions: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub threshold: f64,
    pub snapshot_every: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            grid: GraphGrid {
                n_edges: 2,
                l_max: GraphGrid::DEFAULT_L_MAX,
                n_points: GraphGrid::DEFAULT_POINTS,
            },
            width: 1.0,
            mass_fractions: vec![0.8, 0.9, 0.95],
            horizon: 5.0,
            dt: 1e-3,
            scheme: Scheme::Conservative,
            threshold: 5.0,
            snapshot_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub mass_fraction: f64,
    pub mass: f64,
    pub energy: f64,
    pub status: RunStatus,
    pub bounded: bool,
    /// `max_t ‖u_x(t)‖ / ‖u_x(0)‖`.
    pub max_grad_ratio: f64,
    pub max_sup_ratio: f64,
    pub mass_drift_rate: f64,
    pub energy_drift_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub threshold_mass: f64,
    pub rows: Vec<ScanRow>,
}

pub fn threshold_scan(cfg: &ScanConfig) -> Result<ScanReport, ExperimentError> {
    cfg.grid.validate()?;
    if !(cfg.horizon > 0.0 && cfg.width > 0.0) {
        return Err(ExperimentError::InvalidConfig(
            "horizon and width must be positive".into(),
        ));
    }
    let threshold_mass = ground_state::mass_threshold(cfg.grid.n_edges);
    let mut rows = Vec::with_capacity(cfg.mass_fractions.len());
    for &f in &cfg.mass_fractions {
        if !(f >= 0.0) {
            return Err(ExperimentError::InvalidConfig(format!("mass fraction {f}")));
        }
        let sim = SimConfig {
            gamma: cfg.gamma,
            grid: cfg.grid,
            frame: Frame::Lab,
            scheme: cfg.scheme,
            dt: cfg.dt,
            t_start: 0.0,
            t_end: cfg.horizon,
            initial: InitialCondition::Gaussian {
                amplitude: 1.0,
                width: cfg.width,
                mass: Some(f * threshold_mass),
            },
            snapshot_every: cfg.snapshot_every,
            threshold: cfg.threshold,
            seed: 0,
            noise: 0.0,
            kappa: default_kappa(),
            reproject_every: 1,
        };
        let out = if f == 0.0 {
            None
        } else {
            Some(simulate(&sim)?)
        };
        let row = match out {
            None => ScanRow {
                mass_fraction: 0.0,
                mass: 0.0,
                energy: 0.0,
                status: RunStatus::Completed,
                bounded: true,
                max_grad_ratio: 1.0,
                max_sup_ratio: 1.0,
                mass_drift_rate: 0.0,
                energy_drift_rate: 0.0,
            },
            Some(out) => {
                let first = out.snapshots[0];
                let max_grad = out
                    .snapshots
                    .iter()
                    .map(|r| r.grad_norm)
                    .fold(0.0, f64::max);
                let max_sup = out.snapshots.iter().map(|r| r.sup_norm).fold(0.0, f64::max);
                let elapsed = (out.final_time - sim.t_start).abs().max(cfg.dt);
                ScanRow {
                    mass_fraction: f,
                    mass: first.mass,
                    energy: first.energy,
                    bounded: out.status == RunStatus::Completed,
                    status: out.status,
                    max_grad_ratio: max_grad / first.grad_norm,
                    max_sup_ratio: max_sup / first.sup_norm,
                    mass_drift_rate: out.max_mass_drift / elapsed,
                    energy_drift_rate: out.max_energy_drift / elapsed,
                }
            }
        };
        rows.push(row);
    }
    Ok(ScanReport {
        threshold_mass,
        rows,
    })
}

/// Gagliardo–Nirenberg ratios on the seeded random corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnSummary {
    pub count: usize,
    pub seed: u64,
    pub max_ratio_full: f64,
    pub max_ratio_radial: f64,
    pub ground_state_ratio: f64,
}

pub fn gn_summary(grid: GraphGrid, count: usize, seed: u64) -> Result<GnSummary, ExperimentError> {
    use ground_state::{gn_check, gn_corpus, GnVariant};
    let (mut full, mut radial) = (0.0f64, 0.0f64);
    for u in gn_corpus(grid, count, seed) {
        full = full.max(gn_check(&u, GnVariant::Full)?.ratio);
        radial = radial.max(gn_check(&u, GnVariant::Radial)?.ratio);
    }
    let q = GraphFunction::from_real_fn(grid, ground_state::q);
    let ground_state_ratio = gn_check(&q, GnVariant::Radial)?.ratio;
    Ok(GnSummary {
        count,
        seed,
        max_ratio_full: full,
        max_ratio_radial: radial,
        ground_state_ratio,
    })
}

/// Map a rescaled state to the lab grid (re-exported for drivers).
pub fn to_lab(
    st: &RescaledState,
    exp: &ProfileExpansion,
    lab: GraphGrid,
) -> Result<GraphFunction, ExperimentError> {
    Ok(rescaled_to_lab(st, exp, lab)?)
}
