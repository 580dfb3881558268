//! The model system `b_s + b² − βλ = 0`, `λ_s/λ + b = 0`, `θ_s = 1`: closed
//! form, RK4 integration, the map `𝓕`, the final-data solver and the
//! conversion between the rescaled time `s` and the lab time `t`.
//!
//! With `μ = 1/λ` the system reduces to `μ_ss = β`, which gives the closed
//! form. The model energy `𝓔_mo = b²/λ² − 2β/λ` is conserved.

use crate::quad::{self, QuadError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("trajectory leaves λ > 0 at s = {0}")]
    DomainExit(f64),
    #[error("𝓔*μ + 2β ≤ 0 on the integration range (μ = {0})")]
    EnergyDomain(f64),
    #[error("no bracket for 𝓕(λ) = {0}")]
    NoBracket(f64),
    #[error("Newton iteration diverged after {0} iterations")]
    NewtonDivergence(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("energy evaluation failed: {0}")]
    Energy(String),
}

pub fn b_mo(s: f64) -> f64 {
    2.0 / s
}

pub fn lambda_mo(s: f64, beta: f64) -> f64 {
    2.0 / (beta * s * s)
}

pub fn model_energy(b: f64, lambda: f64, beta: f64) -> f64 {
    b * b / (lambda * lambda) - 2.0 * beta / lambda
}

/// `C_b = 2(3β²/4)^{1/3}`.
pub fn c_b(beta: f64) -> f64 {
    2.0 * (0.75 * beta * beta).cbrt()
}

/// `C_λ = (2/β)(3β²/4)^{2/3}`.
pub fn c_lambda(beta: f64) -> f64 {
    2.0 / beta * (0.75 * beta * beta).cbrt().powi(2)
}

/// Lab time of the model trajectory at rescaled time `s`: `−(4/(3β²)) s^{−3}`.
pub fn t_of_s_model(s: f64, beta: f64) -> f64 {
    -4.0 / (3.0 * beta * beta) / s.powi(3)
}

/// Inverse of [`t_of_s_model`]: `s = (4/(3β²))^{1/3} |t|^{−1/3}`.
pub fn s_of_t_model(t: f64, beta: f64) -> f64 {
    (4.0 / (3.0 * beta * beta)).cbrt() * t.abs().powf(-1.0 / 3.0)
}

/// `(b(s), λ(s))` through `(b₁, λ₁)` at `s₁`.
pub fn closed_form(
    s: f64,
    s1: f64,
    b1: f64,
    lambda1: f64,
    beta: f64,
) -> Result<(f64, f64), ModelError> {
    let d = s - s1;
    let mu = 0.5 * beta * d * d + b1 / lambda1 * d + 1.0 / lambda1;
    if !(mu > 0.0) {
        return Err(ModelError::DomainExit(s));
    }
    let mu_s = beta * d + b1 / lambda1;
    Ok((mu_s / mu, 1.0 / mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub s: f64,
    pub b: f64,
    pub lambda: f64,
    pub theta: f64,
}

impl ModelState {
    pub fn energy(&self, beta: f64) -> f64 {
        model_energy(self.b, self.lambda, beta)
    }
}

fn rhs(b: f64, l: f64, beta: f64) -> (f64, f64) {
    (beta * l - b * b, -b * l)
}

/// RK4 from `state0` to `s_end` (either direction) with step size `step`.
pub fn integrate_model(
    state0: ModelState,
    s_end: f64,
    step: f64,
    beta: f64,
) -> Result<Vec<ModelState>, ModelError> {
    if !(step > 0.0) {
        return Err(ModelError::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    if !(state0.lambda > 0.0) {
        return Err(ModelError::DomainExit(state0.s));
    }
    let span = s_end - state0.s;
    let n = (span.abs() / step).ceil().max(1.0) as usize;
    let ds = span / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    out.push(state0);
    let (mut b, mut l) = (state0.b, state0.lambda);
    for i in 1..=n {
        let k1 = rhs(b, l, beta);
        let k2 = rhs(b + 0.5 * ds * k1.0, l + 0.5 * ds * k1.1, beta);
        let k3 = rhs(b + 0.5 * ds * k2.0, l + 0.5 * ds * k2.1, beta);
        let k4 = rhs(b + ds * k3.0, l + ds * k3.1, beta);
        b += ds / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        l += ds / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        let s = state0.s + i as f64 * ds;
        if !(l > 0.0) || !b.is_finite() {
            return Err(ModelError::DomainExit(s));
        }
        out.push(ModelState {
            s,
            b,
            lambda: l,
            theta: state0.theta + (s - state0.s),
        });
    }
    Ok(out)
}

/// Default reference scale `λ₀ = 0.1·2β/max(1, |𝓔*|)`.
pub fn default_lambda0(beta: f64, energy: f64) -> f64 {
    0.2 * beta / energy.abs().max(1.0)
}

/// `𝓕(λ) = ∫_λ^{λ₀} dμ / (μ^{3/2} √(𝓔*μ + 2β))`, computed in `v = μ^{−1/2}`
/// where the integrand `2/√(2β + 𝓔* v^{−2})` is smooth.
pub fn f_map(lambda: f64, energy: f64, lambda0: f64, beta: f64) -> Result<f64, ModelError> {
    if !(lambda > 0.0 && lambda <= lambda0) {
        return Err(ModelError::InvalidArgument(format!(
            "need 0 < λ ≤ λ₀, got λ = {lambda}, λ₀ = {lambda0}"
        )));
    }
    for mu in [lambda, lambda0] {
        if !(energy * mu + 2.0 * beta > 0.0) {
            return Err(ModelError::EnergyDomain(mu));
        }
    }
    let (va, vb) = (lambda0.powf(-0.5), lambda.powf(-0.5));
    Ok(quad::integrate(
        |v| 2.0 / (2.0 * beta + energy / (v * v)).sqrt(),
        va,
        vb,
        1e-13,
        1e-14,
    )?)
}

/// `𝓕` for `𝓔* = 0`: `(2/√(2β))(λ^{−1/2} − λ₀^{−1/2})`.
pub fn f_map_zero_energy(lambda: f64, lambda0: f64, beta: f64) -> f64 {
    2.0 / (2.0 * beta).sqrt() * (lambda.powf(-0.5) - lambda0.powf(-0.5))
}

/// Solve `𝓕(λ) = s` by bracketing and safeguarded Newton.
pub fn invert_f(s: f64, energy: f64, lambda0: f64, beta: f64) -> Result<f64, ModelError> {
    if !(s >= 0.0) {
        return Err(ModelError::NoBracket(s));
    }
    let (mut lo, mut hi) = (lambda0, lambda0);
    while f_map(lo, energy, lambda0, beta)? < s {
        hi = lo;
        lo *= 0.25;
        if lo < 1e-300 {
            return Err(ModelError::NoBracket(s));
        }
    }
    let mut x = (lo * hi).sqrt();
    for _ in 0..200 {
        let g = f_map(x, energy, lambda0, beta)? - s;
        if g.abs() <= 1e-12 {
            return Ok(x);
        }
        if g > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dg = -x.powf(-1.5) / (energy * x + 2.0 * beta).sqrt();
        let newton = x - g / dg;
        x = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (hi - lo) <= 1e-16 * hi {
            return Ok(x);
        }
    }
    Err(ModelError::NewtonDivergence(200))
}

/// Options of the final-data solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalDataOptions {
    /// Smallest accepted `s₁`.
    pub s_min: f64,
    /// Reference scale; `None` uses [`default_lambda0`].
    pub lambda0: Option<f64>,
    /// Energy shift subtracted from `𝓔*` inside `𝓕`.
    pub energy_shift: Option<f64>,
}

impl Default for FinalDataOptions {
    fn default() -> Self {
        Self {
            s_min: 20.0,
            lambda0: None,
            energy_shift: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalData {
    pub s1: f64,
    pub t1: f64,
    pub b1: f64,
    pub lambda1: f64,
    /// Physical target energy `E*`.
    pub e_star: f64,
    /// `𝓔* = E*/C_Q`.
    pub energy: f64,
    /// Energy used inside `𝓕`.
    pub energy_in_f: f64,
    pub lambda0: f64,
    /// `s₁ |√(λ₁/λ_mo(s₁)) − 1|`.
    pub lambda_ratio_constant: f64,
    /// `s₁ |b₁/b_mo(s₁) − 1|`.
    pub b_ratio_constant: f64,
}

/// Final data `(b₁, λ₁)` with `𝓕(λ₁) = s₁` and `𝓔(b₁, λ₁) = 𝓔*`, where
/// `energy_fn(b, λ)` evaluates `𝓔`.
pub fn final_data(
    s1: f64,
    e_star: f64,
    c_q: f64,
    beta: f64,
    energy_fn: &dyn Fn(f64, f64) -> Result<f64, String>,
    opts: FinalDataOptions,
) -> Result<FinalData, ModelError> {
    if !(s1 >= opts.s_min) {
        return Err(ModelError::InvalidArgument(format!(
            "s1 = {s1} below s_min = {}",
            opts.s_min
        )));
    }
    let energy = e_star / c_q;
    let energy_in_f = energy - opts.energy_shift.unwrap_or(0.0);
    let lambda0 = opts
        .lambda0
        .unwrap_or_else(|| default_lambda0(beta, energy_in_f));
    let lambda1 = invert_f(s1, energy_in_f, lambda0, beta)?;
    let h = |b: f64| -> Result<f64, ModelError> {
        let e = energy_fn(b, lambda1).map_err(ModelError::Energy)?;
        Ok(lambda1 * lambda1 * (e - energy))
    };
    let mut b = b_mo(s1);
    let mut converged = false;
    for _ in 0..50 {
        let hb = h(b)?;
        let db = 1e-6 * b.abs().max(1e-12);
        let slope = (h(b + db)? - h(b - db)?) / (2.0 * db);
        if !(slope.is_finite() && slope != 0.0) {
            return Err(ModelError::NewtonDivergence(0));
        }
        let mut step = hb / slope;
        // keep b positive and the update within a factor two
        while (b - step) <= 0.5 * b || (b - step) >= 2.0 * b {
            step *= 0.5;
        }
        b -= step;
        if hb.abs() <= 1e-12 || step.abs() <= 1e-14 * b {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(ModelError::NewtonDivergence(50));
    }
    Ok(FinalData {
        s1,
        t1: t_of_s_model(s1, beta),
        b1: b,
        lambda1,
        e_star,
        energy,
        energy_in_f,
        lambda0,
        lambda_ratio_constant: s1 * ((lambda1 / lambda_mo(s1, beta)).sqrt() - 1.0).abs(),
        b_ratio_constant: s1 * (b / b_mo(s1) - 1.0).abs(),
    })
}

/// Cumulative map between `s` and `t` along a trajectory with `dt/ds = λ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeMap {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    /// `dt/ds = λ²` at the nodes.
    pub dtds: Vec<f64>,
}

/// Integrate `dt/ds = λ²` along a uniformly spaced trajectory, anchoring
/// `t(s_anchor_index) = t_anchor`.
pub fn time_maps(
    traj: &[ModelState],
    anchor_index: usize,
    t_anchor: f64,
) -> Result<TimeMap, ModelError> {
    let n = traj.len();
    if n < 3 || anchor_index >= n {
        return Err(ModelError::InvalidArgument(
            "time map needs at least three states".into(),
        ));
    }
    let s: Vec<f64> = traj.iter().map(|st| st.s).collect();
    let f: Vec<f64> = traj.iter().map(|st| st.lambda * st.lambda).collect();
    let mut cum = vec![0.0; n];
    for i in 1..n {
        let h = s[i] - s[i - 1];
        // third-order panel rule using a neighbouring node
        let inc = if i + 1 < n {
            h / 12.0 * (5.0 * f[i - 1] + 8.0 * f[i] - f[i + 1])
        } else {
            h / 12.0 * (-f[i - 2] + 8.0 * f[i - 1] + 5.0 * f[i])
        };
        cum[i] = cum[i - 1] + inc;
    }
    let shift = t_anchor - cum[anchor_index];
    Ok(TimeMap {
        s,
        t: cum.iter().map(|c| c + shift).collect(),
        dtds: f,
    })
}

impl TimeMap {
    fn hermite(&self, i: usize, x: f64) -> (f64, f64) {
        let (s0, s1) = (self.s[i], self.s[i + 1]);
        let h = s1 - s0;
        let u = (x - s0) / h;
        let (h00, h10, h01, h11) = (
            2.0 * u.powi(3) - 3.0 * u * u + 1.0,
            u.powi(3) - 2.0 * u * u + u,
            -2.0 * u.powi(3) + 3.0 * u * u,
            u.powi(3) - u * u,
        );
        let t = h00 * self.t[i]
            + h10 * h * self.dtds[i]
            + h01 * self.t[i + 1]
            + h11 * h * self.dtds[i + 1];
        let dt = ((6.0 * u * u - 6.0 * u) * self.t[i]
            + (3.0 * u * u - 4.0 * u + 1.0) * h * self.dtds[i]
            + (-6.0 * u * u + 6.0 * u) * self.t[i + 1]
            + (3.0 * u * u - 2.0 * u) * h * self.dtds[i + 1])
            / h;
        (t, dt)
    }

    fn segment(&self, x: f64, key: &[f64]) -> usize {
        let ascending = key[key.len() - 1] > key[0];
        let idx = if ascending {
            key.partition_point(|v| *v <= x)
        } else {
            key.partition_point(|v| *v >= x)
        };
        idx.clamp(1, key.len() - 1) - 1
    }

    /// `t(s)` by cubic Hermite interpolation.
    pub fn t_of_s(&self, s: f64) -> f64 {
        let i = self.segment(s, &self.s);
        self.hermite(i, s).0
    }

    /// Inverse of [`TimeMap::t_of_s`] by safeguarded Newton on the interpolant.
    pub fn s_of_t(&self, t: f64) -> f64 {
        let i = self.segment(t, &self.t);
        let (mut lo, mut hi) = (self.s[i], self.s[i + 1]);
        let rising = self.t[i + 1] > self.t[i];
        let mut x = 0.5 * (lo + hi);
        for _ in 0..100 {
            let (tv, dt) = self.hermite(i, x);
            let g = tv - t;
            if g == 0.0 {
                break;
            }
            if (g > 0.0) == rising {
                hi = x;
            } else {
                lo = x;
            }
            let nx = x - g / dt;
            x = if nx > lo.min(hi) && nx < lo.max(hi) {
                nx
            } else {
                0.5 * (lo + hi)
            };
            if (hi - lo).abs() < 1e-15 * x.abs() {
                break;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const BETA: f64 = 2.064_098_200_296_6;

    #[test]
    fn closed_form_reproduces_model_solution() {
        let s1 = 30.0;
        for s in [10.0, 30.0, 55.5, 200.0] {
            let (b, l) = closed_form(s, s1, b_mo(s1), lambda_mo(s1, BETA), BETA).unwrap();
            assert!((b - b_mo(s)).abs() < 1e-15);
            assert!((l / lambda_mo(s, BETA) - 1.0).abs() < 1e-13);
        }
        let (b, l) = closed_form(17.0, 17.0, 0.3, 0.01, BETA).unwrap();
        assert_eq!((b, l), (0.3, 0.01));
        assert!(closed_form(-100.0, 0.0, 5.0, 0.001, BETA).is_err());
    }

    #[test]
    fn closed_form_approaches_model_asymptotically() {
        let (s1, b1, l1) = (10.0, 0.5, 0.02);
        let mut prev: Vec<f64> = Vec::new();
        for s in [1e3, 1e4, 1e5] {
            let (b, l) = closed_form(s, s1, b1, l1, BETA).unwrap();
            let eb = (b - b_mo(s)).abs() * s * s;
            let el = (l - lambda_mo(s, BETA)).abs() * s.powi(3);
            assert!(eb < 50.0 && el < 50.0, "{eb} {el}");
            prev.push(el);
        }
        // the scaled λ error settles to a constant
        assert!((prev[2] - prev[1]).abs() < 0.2 * (prev[1] - prev[0]).abs());
    }

    #[test]
    fn rk4_matches_closed_form_and_conserves_energy() {
        let (s1, b1, l1) = (10.0, 0.25, 0.012);
        let traj = integrate_model(
            ModelState {
                s: s1,
                b: b1,
                lambda: l1,
                theta: 0.3,
            },
            100.0,
            1e-3,
            BETA,
        )
        .unwrap();
        let e0 = model_energy(b1, l1, BETA);
        for st in traj.iter().step_by(97) {
            let (b, l) = closed_form(st.s, s1, b1, l1, BETA).unwrap();
            assert!((st.lambda - l).abs() / l <= 1e-8);
            assert!((st.b - b).abs() <= 1e-8 * b.abs().max(1e-3));
            assert!((st.energy(BETA) - e0).abs() <= 1e-8 * (1.0 + e0.abs()));
            assert!((st.theta - 0.3 - (st.s - s1)).abs() < 1e-9);
        }
        let long = integrate_model(
            ModelState {
                s: 10.0,
                b: b_mo(10.0),
                lambda: lambda_mo(10.0, BETA),
                theta: 0.0,
            },
            200.0,
            1e-3,
            BETA,
        )
        .unwrap();
        let drift = long
            .iter()
            .map(|s| s.energy(BETA).abs())
            .fold(0.0, f64::max);
        assert!(drift <= 1e-8, "{drift}");
        assert!(integrate_model(traj[0], 20.0, 0.0, BETA).is_err());
    }

    #[test]
    fn f_map_matches_zero_energy_closed_form() {
        let l0 = default_lambda0(BETA, 0.0);
        for l in [1e-6, 1e-4, 0.01, l0] {
            let f = f_map(l, 0.0, l0, BETA).unwrap();
            let c = f_map_zero_energy(l, l0, BETA);
            assert!((f - c).abs() <= 1e-10 * c.abs().max(1.0), "{f} vs {c}");
        }
        assert_eq!(f_map(l0, 3.0, l0, BETA).unwrap(), 0.0);
        assert!(matches!(
            f_map(1e-3, -1e4, 0.1, BETA),
            Err(ModelError::EnergyDomain(_))
        ));
    }

    #[test]
    fn f_map_is_monotone_and_has_the_right_asymptotics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l0 = 0.1;
        for _ in 0..1000 {
            let a: f64 = 10f64.powf(rng.gen_range(-8.0..-1.0));
            let b: f64 = 10f64.powf(rng.gen_range(-8.0..-1.0));
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if lo == hi {
                continue;
            }
            assert!(f_map(lo, 2.5, l0, BETA).unwrap() > f_map(hi, 2.5, l0, BETA).unwrap());
        }
        let r = |l: f64| f_map(l, 5.0, l0, BETA).unwrap() * (BETA * l / 2.0).sqrt();
        assert!((r(1e-10) - 1.0).abs() < (r(1e-6) - 1.0).abs());
        assert!((r(1e-10) - 1.0).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn inversion_round_trip(s in 0.5f64..500.0, e in -1.0f64..30.0) {
            let l0 = default_lambda0(BETA, e);
            let l = invert_f(s, e, l0, BETA).unwrap();
            prop_assert!((f_map(l, e, l0, BETA).unwrap() - s).abs() <= 1e-10 * s.max(1.0));
        }
    }

    #[test]
    fn final_data_with_model_energy() {
        let energy = |b: f64, l: f64| Ok(model_energy(b, l, BETA));
        for s1 in [40.0, 80.0, 160.0] {
            let fd = final_data(s1, 0.0, 0.2, BETA, &energy, FinalDataOptions::default()).unwrap();
            assert!((f_map(fd.lambda1, 0.0, fd.lambda0, BETA).unwrap() - s1).abs() < 1e-10);
            assert!(model_energy(fd.b1, fd.lambda1, BETA).abs() * fd.lambda1.powi(2) < 1e-12);
            assert!(
                fd.lambda_ratio_constant < 10.0 && fd.b_ratio_constant < 10.0,
                "{fd:?}"
            );
            assert!((fd.t1 - t_of_s_model(s1, BETA)).abs() < 1e-18);
            assert!((s_of_t_model(fd.t1, BETA) / s1 - 1.0).abs() < 1e-13);
        }
        assert!(final_data(5.0, 0.0, 0.2, BETA, &energy, FinalDataOptions::default()).is_err());
    }

    #[test]
    fn time_map_along_model_trajectory() {
        let s0 = 20.0;
        let traj = integrate_model(
            ModelState {
                s: s0,
                b: b_mo(s0),
                lambda: lambda_mo(s0, BETA),
                theta: 0.0,
            },
            200.0,
            1e-2,
            BETA,
        )
        .unwrap();
        let last = traj.len() - 1;
        let tm = time_maps(&traj, last, t_of_s_model(200.0, BETA)).unwrap();
        for (i, &s) in tm.s.iter().enumerate().step_by(500) {
            let err = (tm.t[i] - t_of_s_model(s, BETA)).abs();
            assert!(err <= 1e-9 * s.powi(-3), "{s}: {err}");
        }
        for s in [25.123, 77.7, 150.05] {
            let t = tm.t_of_s(s);
            assert!((tm.s_of_t(t) - s).abs() < 1e-9);
            let (b, l) = (b_mo(s), lambda_mo(s, BETA));
            let at = t.abs();
            assert!((b - c_b(BETA) * at.cbrt()).abs() <= 1e-6 + 1e3 * at);
            assert!(
                (l - c_lambda(BETA) * at.powf(2.0 / 3.0)).abs() <= 1e-9 + 1e3 * at.powf(5.0 / 3.0)
            );
        }
    }

    #[test]
    fn constants() {
        let beta = 64.0 / std::f64::consts::PI.powi(3);
        assert!((c_b(beta) - 2.945_805).abs() < 1e-6);
        assert!((c_lambda(beta) - 2.102_072).abs() < 1e-6);
    }
}
