//! Command-line driver for the star-graph NLS blow-up lab.
//!
//! Exit codes: 0 pass, 1 tolerance failure, 2 configuration error,
//! 3 numerical failure.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use nls_star::evolution::{fit_rate, EvolutionError, Scheme, SnapshotRecord};
use nls_star::experiments::{
    blowup_experiment, constructed_final_data, gn_summary, model_comparison,
    pseudo_conformal_study, residual_order, simulate, threshold_scan, BlowupConfig,
    ExperimentError, PcConfig, ScanConfig, SimConfig,
};
use nls_star::ground_state::{self, build_tables};
use nls_star::io::{parse_snapshots, snapshots_csv, table_csv, OutputDir};
use nls_star::linearized::{identity_suite, Linearized};
use nls_star::model_ode::{self, ModelState};
use nls_star::modulation::{decompose, orthogonalize, synthesize, DecomposeOptions, Params};
use nls_star::profile::build_expansion;
use nls_star::{GraphFunction, GraphGrid, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nls-star",
    version,
    about = "Minimal-mass blow-up lab for the quintic NLS on a star graph"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ground-state identities and the linearized kernel chain.
    CheckIdentities(CheckIdentities),
    /// Build the blow-up profile and measure its residual order.
    BuildProfile(BuildProfile),
    /// Integrate the model parameter system against its closed form.
    ModelOde(ModelOde),
    /// Final data (b₁, λ₁) of the constructed solution.
    FinalData(FinalDataCmd),
    /// Run one simulation from a JSON configuration.
    Simulate(Simulate),
    /// Synthesize a modulated profile and recover its parameters.
    Decompose(Decompose),
    /// Power-law fit of a snapshot column against |t − T*|.
    FitRate(FitRate),
    /// Gagliardo–Nirenberg ratios on a seeded random corpus.
    GnTest(GnTest),
    /// Mass sweep with a fixed gaussian shape.
    ThresholdScan(ThresholdScan),
    /// Constructed blow-up run (γ < 0) or pseudo-conformal control (γ = 0).
    BlowupExperiment(BlowupExperimentCmd),
}

#[derive(Args, Clone, Copy)]
struct GridArgs {
    #[arg(long, default_value_t = 2)]
    n_edges: usize,
    #[arg(long, default_value_t = GraphGrid::DEFAULT_L_MAX)]
    l_max: f64,
    #[arg(long, default_value_t = GraphGrid::DEFAULT_POINTS)]
    n_points: usize,
}

impl GridArgs {
    fn grid(&self) -> Result<GraphGrid> {
        GraphGrid::new(self.n_edges, self.l_max, self.n_points)
            .map_err(|e| config_error(e.to_string()))
    }
}

#[derive(Args)]
struct CheckIdentities {
    /// Edge counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    n_edges: Vec<usize>,
    #[arg(long, default_value_t = GraphGrid::DEFAULT_L_MAX)]
    l_max: f64,
    #[arg(long, default_value_t = GraphGrid::DEFAULT_POINTS)]
    n_points: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildProfile {
    #[arg(long, default_value_t = 3)]
    kappa: usize,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    gamma: f64,
    #[command(flatten)]
    grid: GridArgs,
    /// Rescaled times of the residual sweep along the model trajectory.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "20,40,60,80,100,120,140,160"
    )]
    s_values: Vec<f64>,
    /// Required log-log slope; defaults to κ − 0.25.
    #[arg(long)]
    min_slope: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelOde {
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    gamma: f64,
    #[arg(long, default_value_t = 2)]
    n_edges: usize,
    #[arg(long, default_value_t = 10.0)]
    s_start: f64,
    #[arg(long, default_value_t = 100.0)]
    s_end: f64,
    /// Initial `b`; defaults to the model value `2/s`.
    #[arg(long)]
    b: Option<f64>,
    /// Initial `λ`; defaults to the model value `2/(βs²)`.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FinalDataCmd {
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    gamma: f64,
    #[arg(long, default_value_t = 3)]
    kappa: usize,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 60.0)]
    s1: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    e_star: f64,
    /// Leave the fitted energy shift out of the target energy.
    #[arg(long)]
    no_energy_shift: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Simulate {
    /// JSON configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    t_end: Option<f64>,
    #[arg(long)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SchemeArg {
    Strang,
    CnRelax,
    Conservative,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Strang => Scheme::Strang,
            SchemeArg::CnRelax => Scheme::CnRelax,
            SchemeArg::Conservative => Scheme::Conservative,
        }
    }
}

#[derive(Args)]
struct Decompose {
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    gamma: f64,
    #[arg(long, default_value_t = 3)]
    kappa: usize,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 0.3, allow_hyphen_values = true)]
    theta: f64,
    #[arg(long, default_value_t = 0.05, allow_hyphen_values = true)]
    b: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    /// Amplitude of the orthogonalized random rest.
    #[arg(long, default_value_t = 0.0)]
    h_amplitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative perturbation of the initial guess.
    #[arg(long, default_value_t = 0.02)]
    guess_offset: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitRate {
    /// Snapshot CSV.
    #[arg(long)]
    snapshots: PathBuf,
    #[arg(long, default_value = "grad_norm")]
    column: String,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    t_star: f64,
    /// Window in |t − T*|.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    window: Vec<f64>,
    /// Expected exponent; with `--tol` a mismatch exits with status 1.
    #[arg(long, allow_hyphen_values = true)]
    expect: Option<f64>,
    #[arg(long, default_value_t = 0.02)]
    tol: f64,
}

#[derive(Args)]
struct GnTest {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args)]
struct ThresholdScan {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    mass_fractions: Option<Vec<f64>>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BlowupExperimentCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long)]
    n_edges: Option<usize>,
    #[arg(long)]
    kappa: Option<usize>,
    #[arg(long)]
    s1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    e_star: Option<f64>,
    #[arg(long)]
    ds: Option<f64>,
    /// Tolerance on the λ and b exponents (`2/3` and `1/3`); the γ = 0 control uses `1 ± 0.02`.
    #[arg(long, default_value_t = 0.05)]
    exponent_tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A problem with the user's input rather than with the numerics.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct ConfigError(String);

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Outcome of a command that ran to the end.
enum Verdict {
    Pass,
    Fail(String),
}

impl Verdict {
    fn check(ok: bool, msg: impl FnOnce() -> String) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail(msg())
        }
    }

    fn and(self, other: Verdict) -> Verdict {
        match (self, other) {
            (Verdict::Pass, v) | (v, Verdict::Pass) => v,
            (Verdict::Fail(a), Verdict::Fail(b)) => Verdict::Fail(format!("{a}; {b}")),
        }
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn output(out: &Option<PathBuf>) -> Result<Option<OutputDir>> {
    out.as_ref()
        .map(|p| OutputDir::create(p).context("creating output directory"))
        .transpose()
}

fn check_identities(a: CheckIdentities) -> Result<Verdict> {
    let out = output(&a.out)?;
    let mut reports = Vec::new();
    let mut verdict = Verdict::Pass;
    for &n in &a.n_edges {
        let grid =
            GraphGrid::new(n, a.l_max, a.n_points).map_err(|e| config_error(e.to_string()))?;
        let tables = build_tables(grid);
        let lin = Linearized::new(grid)?;
        let report = identity_suite(&tables, &lin, a.tol);
        for l in report.lines.iter().filter(|l| !l.pass) {
            verdict = verdict.and(Verdict::Fail(format!(
                "N = {n}: {} defect {:e}",
                l.name, l.defect
            )));
        }
        reports.push(report);
    }
    if let Some(o) = &out {
        o.write_metadata(
            "check-identities",
            &json!({"n_edges": a.n_edges, "l_max": a.l_max, "n_points": a.n_points, "tol": a.tol}),
            None,
        )?;
        o.write_json("identities.json", &reports)?;
    }
    emit(&reports)?;
    Ok(verdict)
}

fn build_profile(a: BuildProfile) -> Result<Verdict> {
    let out = output(&a.out)?;
    let grid = a.grid.grid()?;
    let exp = build_expansion(a.kappa, a.gamma, grid)?;
    let order = residual_order(&exp, &a.s_values)?;
    let min_slope = a.min_slope.unwrap_or(a.kappa as f64 - 0.25);
    let summary = json!({
        "kappa": exp.kappa,
        "gamma": exp.gamma,
        "beta": exp.beta,
        "c_q": exp.c_q,
        "n_profiles": exp.p_funcs.len(),
        "alphas": exp.alphas,
        "defects": exp.defects,
        "residual": order,
        "min_slope": min_slope,
    });
    if let Some(o) = &out {
        o.write_metadata(
            "build-profile",
            &json!({"kappa": a.kappa, "gamma": a.gamma, "grid": grid, "s_values": a.s_values, "min_slope": min_slope}),
            Some(&exp),
        )?;
        let (header, rows) = exp.export_columns();
        o.write_text("profile.csv", &table_csv(&header, &rows)?)?;
        o.write_json("profile.json", &summary)?;
    }
    emit(&summary)?;
    Ok(match order.slope {
        None => Verdict::Pass,
        Some(s) => Verdict::check(s >= min_slope, || {
            format!("residual slope {s:.4} below {min_slope}")
        }),
    })
}

fn model_ode_cmd(a: ModelOde) -> Result<Verdict> {
    if a.gamma >= 0.0 {
        return Err(config_error(format!(
            "the model system needs γ < 0, got {}",
            a.gamma
        )));
    }
    let out = output(&a.out)?;
    let beta = ground_state::beta(a.gamma, a.n_edges);
    let start = ModelState {
        s: a.s_start,
        b: a.b.unwrap_or_else(|| model_ode::b_mo(a.s_start)),
        lambda: a
            .lambda
            .unwrap_or_else(|| model_ode::lambda_mo(a.s_start, beta)),
        theta: 0.0,
    };
    let cmp = model_comparison(beta, start, a.s_end, a.step)?;
    let summary = json!({
        "beta": beta,
        "c_b": model_ode::c_b(beta),
        "c_lambda": model_ode::c_lambda(beta),
        "start": start,
        "max_rel_error": cmp.max_rel_error,
        "energy_drift": cmp.energy_drift,
        "tol": a.tol,
    });
    if let Some(o) = &out {
        o.write_metadata("model-ode", &json!({"gamma": a.gamma, "n_edges": a.n_edges, "start": start, "s_end": a.s_end, "step": a.step}), None)?;
        let header: Vec<String> = ["s", "b", "lambda", "b_closed", "lambda_closed", "energy"]
            .map(String::from)
            .to_vec();
        let rows: Vec<Vec<f64>> = cmp.rows.iter().map(|r| r.to_vec()).collect();
        o.write_text("model.csv", &table_csv(&header, &rows)?)?;
        o.write_json("summary.json", &summary)?;
    }
    emit(&summary)?;
    Ok(Verdict::check(cmp.max_rel_error <= a.tol, || {
        format!(
            "closed-form deviation {:e} above {:e}",
            cmp.max_rel_error, a.tol
        )
    }))
}

fn final_data_cmd(a: FinalDataCmd) -> Result<Verdict> {
    let out = output(&a.out)?;
    let grid = a.grid.grid()?;
    let mut exp = build_expansion(a.kappa, a.gamma, grid)?;
    let (fd, shift) = constructed_final_data(&mut exp, a.s1, a.e_star, !a.no_energy_shift)?;
    let summary = json!({"final_data": fd, "shift": shift, "beta": exp.beta, "c_q": exp.c_q});
    if let Some(o) = &out {
        o.write_metadata(
            "final-data",
            &json!({"gamma": a.gamma, "kappa": a.kappa, "grid": grid, "s1": a.s1, "e_star": a.e_star, "energy_shift": !a.no_energy_shift}),
            Some(&exp),
        )?;
        o.write_json("final_data.json", &summary)?;
    }
    emit(&summary)?;
    Ok(Verdict::Pass)
}

fn simulate_cmd(a: Simulate) -> Result<Verdict> {
    let mut cfg: SimConfig = read_config(&a.config)?;
    if let Some(dt) = a.dt {
        cfg.dt = dt;
    }
    if let Some(t) = a.t_end {
        cfg.t_end = t;
    }
    if let Some(s) = a.scheme {
        cfg.scheme = s.into();
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let out = output(&a.out)?;
    if let Some(o) = &out {
        o.write_metadata("simulate", &cfg, None)?;
    }
    let res = simulate(&cfg)?;
    let summary = json!({
        "status": res.status,
        "final_time": res.final_time,
        "max_mass_drift": res.max_mass_drift,
        "max_energy_drift": res.max_energy_drift,
        "max_h_lambda": res.max_h_lambda,
        "final_data": res.final_data,
        "snapshots": res.snapshots.len(),
    });
    if let Some(o) = &out {
        o.write_metadata("simulate", &cfg, res.expansion.as_ref())?;
        o.write_text("snapshots.csv", &snapshots_csv(&res.snapshots)?)?;
        o.write_json("status.json", &summary)?;
    }
    emit(&summary)?;
    Ok(Verdict::Pass)
}

fn decompose_cmd(a: Decompose) -> Result<Verdict> {
    if !(a.lambda > 0.0) {
        return Err(config_error(format!(
            "lambda must be positive, got {}",
            a.lambda
        )));
    }
    let out = output(&a.out)?;
    let profile_grid =
        GraphGrid::standard(a.grid.n_edges).map_err(|e| config_error(e.to_string()))?;
    let exp = build_expansion(a.kappa, a.gamma, profile_grid)?;
    let truth = Params::new(a.theta, a.b, a.lambda);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let h = if a.h_amplitude == 0.0 {
        GraphFunction::zeros(profile_grid)
    } else {
        let (c, w) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..1.5));
        let amp = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * a.h_amplitude;
        let raw = GraphFunction::from_fn(profile_grid, |y| amp * (-((y - c) / w).powi(2)).exp());
        orthogonalize(&raw, truth, &exp)?
    };
    let lab = GraphGrid::new(a.grid.n_edges, a.grid.l_max * a.lambda, a.grid.n_points)
        .map_err(|e| config_error(e.to_string()))?;
    let u = synthesize(truth, &h, &exp, lab)?;
    let jitter =
        |x: f64, rng: &mut ChaCha8Rng| x * (1.0 + a.guess_offset * rng.gen_range(-1.0..1.0));
    let guess = Params::new(
        a.theta + a.guess_offset * rng.gen_range(-1.0..1.0),
        jitter(a.b, &mut rng),
        jitter(a.lambda, &mut rng),
    );
    let st = decompose(&u, guess, &exp, DecomposeOptions::default())?;
    let err = [
        (st.params.theta - a.theta).abs(),
        (st.params.b - a.b).abs() / a.b.abs().max(1e-12),
        (st.params.lambda - a.lambda).abs() / a.lambda,
    ];
    let summary = json!({
        "truth": truth,
        "guess": guess,
        "recovered": st.params,
        "errors": {"theta_abs": err[0], "b_rel": err[1], "lambda_rel": err[2]},
        "defects": st.defects,
        "iterations": st.iterations,
        "tube_distance": st.tube_distance,
        "tol": a.tol,
    });
    if let Some(o) = &out {
        o.write_metadata(
            "decompose",
            &json!({"gamma": a.gamma, "kappa": a.kappa, "truth": truth, "h_amplitude": a.h_amplitude, "seed": a.seed, "guess_offset": a.guess_offset}),
            Some(&exp),
        )?;
        o.write_json("decomposition.json", &summary)?;
    }
    emit(&summary)?;
    let worst = err.iter().copied().fold(0.0, f64::max);
    Ok(Verdict::check(worst <= a.tol, || {
        format!("parameter error {worst:e} above {:e}", a.tol)
    }))
}

fn column(r: &SnapshotRecord, name: &str) -> Option<f64> {
    Some(match name {
        "grad_norm" => r.grad_norm,
        "sup_norm" => r.sup_norm,
        "vertex_abs" => r.vertex_abs,
        "lambda" => r.lambda,
        "b" => r.b,
        "h_l2" => r.h_l2,
        "h_h1" => r.h_h1,
        "mass" => r.mass,
        _ => return None,
    })
}

fn fit_rate_cmd(a: FitRate) -> Result<Verdict> {
    let text = std::fs::read_to_string(&a.snapshots)
        .map_err(|e| config_error(format!("{}: {e}", a.snapshots.display())))?;
    let recs = parse_snapshots(&text).map_err(|e| config_error(e.to_string()))?;
    if recs.is_empty() || column(&recs[0], &a.column).is_none() {
        return Err(config_error(format!(
            "unknown or empty column {:?}",
            a.column
        )));
    }
    let window = (a.window[0], a.window[1]);
    let t: Vec<f64> = recs.iter().map(|r| r.t).collect();
    let y: Vec<f64> = recs.iter().filter_map(|r| column(r, &a.column)).collect();
    let fit = fit_rate(&t, &y, window, a.t_star)?;
    emit(&json!({"column": a.column, "t_star": a.t_star, "window": window, "fit": fit}))?;
    Ok(match a.expect {
        None => Verdict::Pass,
        Some(e) => Verdict::check((fit.exponent - e).abs() <= a.tol, || {
            format!("exponent {:.4} outside {e} ± {}", fit.exponent, a.tol)
        }),
    })
}

fn gn_test(a: GnTest) -> Result<Verdict> {
    let g = gn_summary(a.grid.grid()?, a.count, a.seed)?;
    emit(&g)?;
    let worst = g.max_ratio_full.max(g.max_ratio_radial);
    Ok(Verdict::check(worst <= 1.0 + a.tol, || {
        format!("GN ratio {worst} above 1 + {:e}", a.tol)
    }))
}

fn threshold_scan_cmd(a: ThresholdScan) -> Result<Verdict> {
    let mut cfg: ScanConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => ScanConfig::default(),
    };
    if let Some(g) = a.gamma {
        cfg.gamma = g;
    }
    if let Some(f) = a.mass_fractions {
        cfg.mass_fractions = f;
    }
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    let out = output(&a.out)?;
    if let Some(o) = &out {
        o.write_metadata("threshold-scan", &cfg, None)?;
    }
    let report = threshold_scan(&cfg)?;
    if let Some(o) = &out {
        o.write_json("scan.json", &report)?;
        let header: Vec<String> = [
            "mass_fraction",
            "mass",
            "energy",
            "bounded",
            "max_grad_ratio",
            "max_sup_ratio",
            "mass_drift_rate",
            "energy_drift_rate",
        ]
        .map(String::from)
        .to_vec();
        let rows: Vec<Vec<f64>> = report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.mass_fraction,
                    r.mass,
                    r.energy,
                    if r.bounded { 1.0 } else { 0.0 },
                    r.max_grad_ratio,
                    r.max_sup_ratio,
                    r.mass_drift_rate,
                    r.energy_drift_rate,
                ]
            })
            .collect();
        o.write_text("scan.csv", &table_csv(&header, &rows)?)?;
    }
    emit(&report)?;
    let below: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| r.mass_fraction < 1.0 && !r.bounded)
        .map(|r| r.mass_fraction)
        .collect();
    Ok(Verdict::check(below.is_empty(), || {
        format!("sub-threshold masses not bounded: {below:?}")
    }))
}

fn blowup_cmd(a: BlowupExperimentCmd) -> Result<Verdict> {
    let mut cfg: BlowupConfig = match &a.config {
        Some(p) => read_config(p)?,
        None => BlowupConfig::default(),
    };
    if let Some(v) = a.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = a.n_edges {
        cfg.n_edges = v;
    }
    if let Some(v) = a.kappa {
        cfg.kappa = v;
    }
    if let Some(v) = a.s1 {
        cfg.s1 = v;
    }
    if let Some(v) = a.e_star {
        cfg.e_star = v;
    }
    if let Some(v) = a.ds {
        cfg.ds = v;
    }
    let out = output(&a.out)?;
    if cfg.gamma == 0.0 {
        let pc = PcConfig {
            grid: GraphGrid {
                n_edges: cfg.n_edges,
                ..PcConfig::default().grid
            },
            ..Default::default()
        };
        if let Some(o) = &out {
            o.write_metadata("blowup-experiment", &pc, None)?;
        }
        let res = pseudo_conformal_study(&pc)?;
        if let Some(o) = &out {
            o.write_text("snapshots.csv", &snapshots_csv(&res.snapshots)?)?;
            o.write_json("report.json", &res.report)?;
        }
        emit(&res.report)?;
        let e = res.report.grad_fit.exponent;
        return Ok(Verdict::check((e + 1.0).abs() <= 0.02, || {
            format!("gradient exponent {e:.4} outside −1 ± 0.02")
        }));
    }
    if let Some(o) = &out {
        o.write_metadata("blowup-experiment", &cfg, None)?;
    }
    let res = blowup_experiment(&cfg)?;
    let r = &res.report;
    if let Some(o) = &out {
        o.write_metadata("blowup-experiment", &cfg, Some(&res.expansion))?;
        o.write_text("snapshots.csv", &snapshots_csv(&res.snapshots)?)?;
        o.write_json("report.json", r)?;
        if let Some(ts) = r.t_star {
            let header: Vec<String> = [
                "t",
                "dt_star",
                "lambda",
                "lambda_model",
                "b",
                "b_model",
                "h_lambda",
            ]
            .map(String::from)
            .to_vec();
            let rows: Vec<Vec<f64>> = res
                .snapshots
                .iter()
                .map(|s| {
                    let d = (s.t - ts).abs();
                    let h_lambda = (s.h_h1.powi(2) + s.lambda * s.yh_l2.powi(2)).sqrt();
                    vec![
                        s.t,
                        d,
                        s.lambda,
                        r.c_lambda * d.powf(2.0 / 3.0),
                        s.b,
                        r.c_b * d.cbrt(),
                        h_lambda,
                    ]
                })
                .collect();
            o.write_text("overlay.csv", &table_csv(&header, &rows)?)?;
        }
    }
    emit(r)?;
    if let Some(f) = &r.failure {
        return Ok(Verdict::Fail(f.clone()));
    }
    let tol = a.exponent_tol;
    let mut v = Verdict::Pass;
    if let Some(f) = &r.lambda_fit {
        v = v.and(Verdict::check(
            (f.exponent - 2.0 / 3.0).abs() <= tol,
            || format!("λ exponent {:.4} outside 2/3 ± {tol}", f.exponent),
        ));
    }
    if let Some(f) = &r.b_fit {
        v = v.and(Verdict::check(
            (f.exponent - 1.0 / 3.0).abs() <= tol,
            || format!("b exponent {:.4} outside 1/3 ± {tol}", f.exponent),
        ));
    }
    Ok(v)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<ExperimentError>() {
            return if e.is_config() { 2 } else { 3 };
        }
        if let Some(EvolutionError::InvalidConfig(_)) = cause.downcast_ref::<EvolutionError>() {
            return 2;
        }
    }
    3
}

fn run(cli: Cli) -> Result<Verdict> {
    match cli.command {
        Command::CheckIdentities(a) => check_identities(a),
        Command::BuildProfile(a) => build_profile(a),
        Command::ModelOde(a) => model_ode_cmd(a),
        Command::FinalData(a) => final_data_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Decompose(a) => decompose_cmd(a),
        Command::FitRate(a) => fit_rate_cmd(a),
        Command::GnTest(a) => gn_test(a),
        Command::ThresholdScan(a) => threshold_scan_cmd(a),
        Command::BlowupExperiment(a) => blowup_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail(msg)) => {
            eprintln!("tolerance failure: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
