//! Uniform δ-persistency of excitation: horizon-bounded checks, excitation
//! profiles, filtered signals, products and the steady-state gain `ω`.
//!
//! A signal `φ(t, x)` is uniformly δ-persistently exciting at `x` when there
//! are `T, μ > 0` such that every window `[t, t+T]` carries at least `μ` of
//! `∫‖φ(τ, z)‖dτ` for every `z` within `δ` of `x`. Only a finite horizon and a
//! finite set of `z` can be examined, so a pass is evidence, not proof; a
//! failure comes with a concrete witness.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{norm, sample_region, DynamicsError, RegionSpec};
use crate::plants::{simpson_kernel, HeatFunction, DEFAULT_TRUNCATION};

pub type Signal = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarSignal = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Default integration step for window masses.
pub const DEFAULT_T_STEP: f64 = 1e-2;
/// Relative slack on `μ` absorbing trapezoid round-off.
const MASS_RTOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExcitationError {
    #[error("the excited part of x is zero; the definition excludes it")]
    ZeroSplit,
    #[error("window length {window} exceeds the probe horizon {horizon}")]
    WindowTooLong { window: f64, horizon: f64 },
    #[error("invalid excitation parameter: {0}")]
    InvalidParameter(String),
    #[error("no closed form registered for this steady-state gain")]
    UnregisteredClosedForm,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// A signal `φ(t, x)` with the indices of `x` whose size it must reflect
/// and the time grid on which it is examined.
#[derive(Clone)]
pub struct ExcitationProbe {
    pub phi: Signal,
    pub split: Vec<usize>,
    pub t_start: f64,
    pub t_end: f64,
    pub t_step: f64,
}

impl std::fmt::Debug for ExcitationProbe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExcitationProbe")
            .field("split", &self.split)
            .field("t_start", &self.t_start)
            .field("t_end", &self.t_end)
            .field("t_step", &self.t_step)
            .finish_non_exhaustive()
    }
}

impl ExcitationProbe {
    pub fn new<F>(phi: F, split: Vec<usize>, horizon: (f64, f64)) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            phi: Arc::new(phi),
            split,
            t_start: horizon.0,
            t_end: horizon.1,
            t_step: DEFAULT_T_STEP,
        }
    }

    /// Scalar signal excited by the first coordinate of a one-dimensional `x`.
    pub fn scalar<F>(phi: F, horizon: (f64, f64)) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(move |t, x| vec![phi(t, x[0])], vec![0], horizon)
    }

    pub fn with_step(mut self, t_step: f64) -> Self {
        self.t_step = t_step;
        self
    }

    pub fn with_horizon(mut self, t_start: f64, t_end: f64) -> Self {
        self.t_start = t_start;
        self.t_end = t_end;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.t_end - self.t_start
    }

    fn validate(&self) -> Result<(), ExcitationError> {
        if !(self.t_end > self.t_start) || !self.t_start.is_finite() || !self.t_end.is_finite() {
            return Err(ExcitationError::InvalidParameter(format!(
                "empty horizon [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        if !(self.t_step > 0.0) {
            return Err(ExcitationError::InvalidParameter(format!("t_step = {}", self.t_step)));
        }
        Ok(())
    }

    /// Number of grid intervals in the horizon.
    fn steps(&self) -> usize {
        (self.horizon() / self.t_step).round().max(1.0) as usize
    }

    fn grid_time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.t_step
    }

    fn window_steps(&self, window: f64) -> Result<usize, ExcitationError> {
        if !(window > 0.0) {
            return Err(ExcitationError::InvalidParameter(format!("window T = {window}")));
        }
        if window > self.horizon() + 1e-12 {
            return Err(ExcitationError::WindowTooLong {
                window,
                horizon: self.horizon(),
            });
        }
        Ok(((window / self.t_step).round() as usize).clamp(1, self.steps()))
    }

    /// `‖φ‖` on the time grid for a frozen `z`.
    fn norms(&self, z: &[f64]) -> Vec<f64> {
        (0..=self.steps()).map(|k| norm(&(self.phi)(self.grid_time(k), z))).collect()
    }

    fn split_norm(&self, x: &[f64]) -> f64 {
        norm(&self.split.iter().map(|&i| x[i]).collect::<Vec<_>>())
    }
}

/// Trapezoid estimate of `∫_t^{t+T} ‖φ(τ, z)‖dτ` on the probe step.
pub fn window_mass(probe: &ExcitationProbe, t: f64, z: &[f64], window: f64) -> f64 {
    let n = (window / probe.t_step).round().max(1.0) as usize;
    let h = window / n as f64;
    let f = |k: usize| norm(&(probe.phi)(t + k as f64 * h, z));
    let inner: f64 = (1..n).map(f).sum();
    h * (inner + 0.5 * (f(0) + f(n)))
}

/// Sampling options shared by the checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Points examined in each δ-neighbourhood.
    pub z_samples: usize,
    pub seed: u64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { z_samples: 21, seed: 0 }
    }
}

/// Points `z` with `‖z − x‖ ≤ δ`: a uniform line in one dimension, the
/// centre plus low-discrepancy points otherwise.
pub fn neighbourhood(x: &[f64], delta: f64, opts: SampleOptions) -> Result<Vec<Vec<f64>>, ExcitationError> {
    let count = opts.z_samples.max(2);
    if x.len() == 1 {
        return Ok((0..count)
            .map(|k| vec![x[0] - delta + 2.0 * delta * k as f64 / (count - 1) as f64])
            .collect());
    }
    let mut pts = vec![x.to_vec()];
    if delta > 0.0 {
        let region = RegionSpec::ball(delta, x.len())?;
        for p in sample_region(&region, count - 1, opts.seed)? {
            pts.push(x.iter().zip(&p).map(|(a, b)| a + b).collect());
        }
    }
    Ok(pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub z: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdpeVerdict {
    pub pass: bool,
    /// Smallest window mass seen.
    pub min_mass: f64,
    /// Where the smallest mass occurred (a counterexample when `pass` is false).
    pub witness: Option<Witness>,
    pub window: f64,
    pub mu: f64,
    pub points: usize,
}

/// Smallest mass over all grid windows, for each precomputed norm series.
fn min_window_mass(series: &[f64], w: usize, h: f64) -> (f64, usize) {
    let mut prefix = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    prefix.push(0.0);
    for k in 1..series.len() {
        acc += 0.5 * h * (series[k - 1] + series[k]);
        prefix.push(acc);
    }
    let mut best = (f64::INFINITY, 0);
    for k in 0..series.len().saturating_sub(w) {
        let m = prefix[k + w] - prefix[k];
        if m < best.0 {
            best = (m, k);
        }
    }
    best
}

/// Smallest and largest window mass of a sampled norm series.
fn window_mass_range(series: &[f64], w: usize, h: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let mut acc = 0.0;
    let mut prefix = vec![0.0];
    for k in 1..series.len() {
        acc += 0.5 * h * (series[k - 1] + series[k]);
        prefix.push(acc);
    }
    for k in 0..series.len().saturating_sub(w) {
        let m = prefix[k + w] - prefix[k];
        lo = lo.min(m);
        hi = hi.max(m);
    }
    (lo, hi)
}

/// Shared core: window masses over already sampled norm series.
fn udpe_over_series(
    probe: &ExcitationProbe,
    series: Vec<(Vec<f64>, Vec<f64>)>,
    window: f64,
    mu: f64,
) -> Result<UdpeVerdict, ExcitationError> {
    let w = probe.window_steps(window)?;
    let points = series.len();
    let worst = series
        .par_iter()
        .map(|(z, s)| {
            let (m, k) = min_window_mass(s, w, probe.t_step);
            (m, k, z)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0));
    let (min_mass, k, z) = worst.ok_or_else(|| ExcitationError::InvalidParameter("no sample points".into()))?;
    let pass = min_mass >= mu * (1.0 - MASS_RTOL);
    Ok(UdpeVerdict {
        pass,
        min_mass,
        witness: Some(Witness {
            t: probe.grid_time(k),
            z: z.clone(),
            mass: min_mass,
        }),
        window: w as f64 * probe.t_step,
        mu,
        points,
    })
}

/// Check the excitation inequality for every grid window of the horizon and
/// every sampled `z` in the δ-ball around `x`.
pub fn check_udpe(
    probe: &ExcitationProbe,
    x: &[f64],
    delta: f64,
    window: f64,
    mu: f64,
    opts: SampleOptions,
) -> Result<UdpeVerdict, ExcitationError> {
    probe.validate()?;
    if !(mu > 0.0) || !(delta >= 0.0) {
        return Err(ExcitationError::InvalidParameter(format!("delta = {delta}, mu = {mu}")));
    }
    if probe.split_norm(x) == 0.0 {
        return Err(ExcitationError::ZeroSplit);
    }
    probe.window_steps(window)?;
    let zs = neighbourhood(x, delta, opts)?;
    let series: Vec<_> = zs.into_par_iter().map(|z| {
        let s = probe.norms(&z);
        (z, s)
    }).collect();
    udpe_over_series(probe, series, window, mu)
}

/// Excitation tables: for each radius `r`, a window `θ(r)` and mass `γ(r)`
/// valid for all sampled states whose excited part has norm `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeProfile {
    pub radii: Vec<f64>,
    pub theta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Radii at which no window in the ladder carried positive mass.
    pub not_pe: Vec<bool>,
}

impl PeProfile {
    /// Mass bound for an excited part of norm `s`: the entry of the largest
    /// tabulated radius not exceeding `s`, zero below the table.
    pub fn gamma_at(&self, s: f64) -> f64 {
        match self.radii.iter().rposition(|r| *r <= s * (1.0 + 1e-12)) {
            Some(k) if !self.not_pe[k] => self.gamma[k],
            _ => 0.0,
        }
    }

    pub fn theta_at(&self, s: f64) -> f64 {
        let k = self.radii.iter().rposition(|r| *r <= s * (1.0 + 1e-12)).unwrap_or(0);
        self.theta[k]
    }

    /// `(radius, theta, gamma)` rows for CSV export.
    pub fn rows(&self) -> Vec<[f64; 3]> {
        (0..self.radii.len())
            .map(|k| [self.radii[k], self.theta[k], self.gamma[k]])
            .collect()
    }

    pub fn is_pe_everywhere(&self) -> bool {
        !self.not_pe.iter().any(|b| *b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    /// Windows tried are `k·t_base` for `k = 1…t_count`.
    pub t_base: f64,
    pub t_count: usize,
    pub samples: SampleOptions,
    /// A window length counts only if its weakest window carries at least
    /// this fraction of its strongest one; fading signals fail this.
    pub min_relative_mass: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            t_base: std::f64::consts::TAU,
            t_count: 4,
            samples: SampleOptions { z_samples: 16, seed: 0 },
            min_relative_mass: 1e-3,
        }
    }
}

/// States whose excited part has norm exactly `r`, the rest inside `B(Δ)`.
fn shell_points(probe: &ExcitationProbe, dim: usize, r: f64, delta: f64, opts: SampleOptions) -> Result<Vec<Vec<f64>>, ExcitationError> {
    let ns = probe.split.len();
    let directions: Vec<Vec<f64>> = if ns == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        sample_region(&RegionSpec::ball(1.0, ns)?, opts.z_samples.max(2 * ns), opts.seed)?
            .into_iter()
            .filter(|d| norm(d) > 1e-6)
            .map(|d| {
                let n = norm(&d);
                d.into_iter().map(|v| v / n).collect()
            })
            .collect()
    };
    let others: Vec<usize> = (0..dim).filter(|i| !probe.split.contains(i)).collect();
    let rest: Vec<Vec<f64>> = if others.is_empty() {
        vec![vec![]]
    } else {
        let mut v = vec![vec![0.0; others.len()]];
        v.extend(sample_region(&RegionSpec::ball(delta, others.len())?, opts.z_samples, opts.seed ^ 0x9e37)?);
        v
    };
    let mut pts = Vec::with_capacity(directions.len() * rest.len());
    for d in &directions {
        for o in &rest {
            let mut x = vec![0.0; dim];
            for (j, &i) in probe.split.iter().enumerate() {
                x[i] = r * d[j];
            }
            for (j, &i) in others.iter().enumerate() {
                x[i] = o[j];
            }
            pts.push(x);
        }
    }
    Ok(pts)
}

/// Excitation tables at explicit radii. `dim` is the full state dimension.
pub fn estimate_pe_profile_at(
    probe: &ExcitationProbe,
    dim: usize,
    delta: f64,
    radii: &[f64],
    opts: ProfileOptions,
) -> Result<PeProfile, ExcitationError> {
    probe.validate()?;
    if radii.is_empty() || !(opts.t_base > 0.0) || opts.t_count == 0 {
        return Err(ExcitationError::InvalidParameter("empty radius or window ladder".into()));
    }
    let ladder: Vec<f64> = (1..=opts.t_count)
        .map(|k| k as f64 * opts.t_base)
        .filter(|t| *t <= probe.horizon() + 1e-12)
        .collect();
    if ladder.is_empty() {
        return Err(ExcitationError::WindowTooLong {
            window: opts.t_base,
            horizon: probe.horizon(),
        });
    }
    let mut out = PeProfile {
        radii: radii.to_vec(),
        theta: Vec::new(),
        gamma: Vec::new(),
        not_pe: Vec::new(),
    };
    for &r in radii {
        let pts = shell_points(probe, dim, r, delta, opts.samples)?;
        let series: Vec<Vec<f64>> = pts.par_iter().map(|z| probe.norms(z)).collect();
        let masses: Vec<f64> = ladder
            .iter()
            .map(|&t| {
                let w = probe.window_steps(t).expect("ladder within horizon");
                let (lo, hi) = series
                    .iter()
                    .map(|s| window_mass_range(s, w, probe.t_step))
                    .fold((f64::INFINITY, 0.0f64), |(a, b), (l, h)| (a.min(l), b.max(h)));
                if lo >= opts.min_relative_mass * hi {
                    lo
                } else {
                    0.0
                }
            })
            .collect();
        let best_rate = ladder
            .iter()
            .zip(&masses)
            .map(|(t, m)| m / t)
            .fold(0.0, f64::max);
        let pick = ladder
            .iter()
            .zip(&masses)
            .find(|(t, m)| **m > 0.0 && best_rate > 0.0 && *m / **t >= 0.9 * best_rate);
        match pick {
            Some((t, m)) => {
                out.theta.push(*t);
                out.gamma.push(*m);
                out.not_pe.push(false);
            }
            None => {
                out.theta.push(*ladder.last().unwrap());
                out.gamma.push(0.0);
                out.not_pe.push(true);
            }
        }
    }
    Ok(out)
}

/// Excitation tables on the halving ladder `Δ·2^{−(count−1−k)}`, `k = 0…count−1`.
pub fn estimate_pe_profile(
    probe: &ExcitationProbe,
    dim: usize,
    delta: f64,
    radii_count: usize,
    opts: ProfileOptions,
) -> Result<PeProfile, ExcitationError> {
    if !(delta > 0.0) || radii_count == 0 {
        return Err(ExcitationError::InvalidParameter(format!(
            "Delta = {delta}, radii_count = {radii_count}"
        )));
    }
    let radii: Vec<f64> = (0..radii_count)
        .map(|k| delta * 0.5f64.powi((radii_count - 1 - k) as i32))
        .collect();
    estimate_pe_profile_at(probe, dim, delta, &radii, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    ClosedForm,
    Quadrature,
}

/// `ω(t, ξ) = ∫_{-∞}^t e^{−(t−τ)} ψ(τ, ξ) dτ`, the bounded solution of
/// `ω̇ = −ω + ψ` for frozen `ξ`.
#[derive(Clone)]
pub struct SteadyStateGain {
    psi: ScalarSignal,
    closed: Option<ScalarSignal>,
    pub mode: GainMode,
    pub truncation: f64,
}

impl std::fmt::Debug for SteadyStateGain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SteadyStateGain")
            .field("mode", &self.mode)
            .field("truncation", &self.truncation)
            .finish_non_exhaustive()
    }
}

pub fn steady_state_gain(
    psi: ScalarSignal,
    closed: Option<ScalarSignal>,
    mode: GainMode,
    truncation: f64,
) -> Result<SteadyStateGain, ExcitationError> {
    if mode == GainMode::ClosedForm && closed.is_none() {
        return Err(ExcitationError::UnregisteredClosedForm);
    }
    if !(truncation > 0.0) {
        return Err(ExcitationError::InvalidParameter(format!("truncation = {truncation}")));
    }
    Ok(SteadyStateGain {
        psi,
        closed,
        mode,
        truncation,
    })
}

impl SteadyStateGain {
    /// Gain of the heat function's `ψ`, with its closed form registered when the kind has one.
    pub fn from_heat(heat: HeatFunction, mode: GainMode) -> Result<Self, ExcitationError> {
        let psi: ScalarSignal = Arc::new(move |t, xi| heat.psi(t, xi));
        let closed: Option<ScalarSignal> = heat
            .steady_closed_form(0.0, &[])
            .map(|_| Arc::new(move |t: f64, xi: &[f64]| heat.steady_closed_form(t, xi).unwrap()) as ScalarSignal);
        steady_state_gain(psi, closed, mode, DEFAULT_TRUNCATION)
    }

    pub fn value(&self, t: f64, xi: &[f64]) -> f64 {
        match (self.mode, &self.closed) {
            (GainMode::ClosedForm, Some(c)) => c(t, xi),
            _ => simpson_kernel(|tau| (self.psi)(tau, xi), t, self.truncation),
        }
    }

    pub fn psi(&self, t: f64, xi: &[f64]) -> f64 {
        (self.psi)(t, xi)
    }

    /// `e^{−W}·sup|ψ|` for the quadrature mode; zero for a closed form.
    pub fn truncation_error_bound(&self, sup_psi: f64) -> f64 {
        match self.mode {
            GainMode::ClosedForm => 0.0,
            GainMode::Quadrature => (-self.truncation).exp() * sup_psi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub pass: bool,
    pub per_point: Vec<UdpeVerdict>,
}

/// Pass `φ` through `Φ̇ = −aΦ + φ(t, z)` (for each frozen `z`, starting at
/// `init`) and check the excitation inequality on `Φ` at each test point.
#[allow(clippy::too_many_arguments)]
pub fn filtered_excitation_preserves_pe(
    probe: &ExcitationProbe,
    a: f64,
    init: f64,
    test_points: &[Vec<f64>],
    delta: f64,
    window: f64,
    mu: f64,
    opts: SampleOptions,
) -> Result<FilterVerdict, ExcitationError> {
    probe.validate()?;
    if !(a > 0.0) {
        return Err(ExcitationError::InvalidParameter(format!("filter pole a = {a}")));
    }
    let mut per_point = Vec::with_capacity(test_points.len());
    for x in test_points {
        if probe.split_norm(x) == 0.0 {
            return Err(ExcitationError::ZeroSplit);
        }
        let zs = neighbourhood(x, delta, opts)?;
        let series: Vec<_> = zs
            .into_par_iter()
            .map(|z| {
                let s = filtered_norms(probe, a, init, &z);
                (z, s)
            })
            .collect();
        per_point.push(udpe_over_series(probe, series, window, mu)?);
    }
    Ok(FilterVerdict {
        pass: per_point.iter().all(|v| v.pass),
        per_point,
    })
}

/// RK4 of the stable filter on the probe grid for one frozen `z`.
fn filtered_norms(probe: &ExcitationProbe, a: f64, init: f64, z: &[f64]) -> Vec<f64> {
    let h = probe.t_step;
    let f = |t: f64, p: &[f64]| -> Vec<f64> {
        let phi = (probe.phi)(t, z);
        p.iter().zip(&phi).map(|(pi, fi)| -a * pi + fi).collect()
    };
    let dim = (probe.phi)(probe.t_start, z).len();
    let mut p = vec![init; dim];
    let mut out = Vec::with_capacity(probe.steps() + 1);
    out.push(norm(&p));
    for k in 0..probe.steps() {
        let t = probe.grid_time(k);
        let k1 = f(t, &p);
        let p2: Vec<f64> = p.iter().zip(&k1).map(|(x, d)| x + 0.5 * h * d).collect();
        let k2 = f(t + 0.5 * h, &p2);
        let p3: Vec<f64> = p.iter().zip(&k2).map(|(x, d)| x + 0.5 * h * d).collect();
        let k3 = f(t + 0.5 * h, &p3);
        let p4: Vec<f64> = p.iter().zip(&k3).map(|(x, d)| x + h * d).collect();
        let k4 = f(t + h, &p4);
        for i in 0..dim {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(norm(&p));
    }
    out
}

/// Smallest window in `ladder` whose worst-case mass is positive, with that mass.
pub fn search_udpe(
    probe: &ExcitationProbe,
    x: &[f64],
    delta: f64,
    ladder: &[f64],
    opts: SampleOptions,
) -> Result<Option<(f64, f64)>, ExcitationError> {
    probe.validate()?;
    if probe.split_norm(x) == 0.0 {
        return Err(ExcitationError::ZeroSplit);
    }
    let zs = neighbourhood(x, delta, opts)?;
    let series: Vec<Vec<f64>> = zs.par_iter().map(|z| probe.norms(z)).collect();
    for &t in ladder {
        let w = probe.window_steps(t)?;
        let m = series
            .iter()
            .map(|s| min_window_mass(s, w, probe.t_step).0)
            .fold(f64::INFINITY, f64::min);
        if m > 1e-12 {
            return Ok(Some((w as f64 * probe.t_step, m)));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorResult {
    pub pass: bool,
    /// Searched `(T, μ)` when the factor passes.
    pub found: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductReport {
    pub product: UdpeVerdict,
    pub factors: Vec<FactorResult>,
    pub powers: Vec<(i32, FactorResult)>,
    /// Product exciting ⇒ every factor (and tested power) exciting.
    pub implication_holds: bool,
    pub note: String,
}

/// Empirical check that excitation of a product of scalar signals carries
/// over to each factor and to powers of the product.
#[allow(clippy::too_many_arguments)]
pub fn product_factor_check(
    factors: &[ExcitationProbe],
    x: &[f64],
    delta: f64,
    window: f64,
    mu: f64,
    powers: &[i32],
    ladder: &[f64],
    opts: SampleOptions,
) -> Result<ProductReport, ExcitationError> {
    let first = factors
        .first()
        .ok_or_else(|| ExcitationError::InvalidParameter("no factors".into()))?;
    let fs: Vec<Signal> = factors.iter().map(|f| f.phi.clone()).collect();
    let product_phi = move |t: f64, z: &[f64]| -> f64 { fs.iter().map(|f| f(t, z)[0]).product() };
    let product_phi = Arc::new(product_phi);
    let mut product = first.clone();
    let pp = product_phi.clone();
    product.phi = Arc::new(move |t, z| vec![pp(t, z)]);
    let product_verdict = check_udpe(&product, x, delta, window, mu, opts)?;

    let search = |probe: &ExcitationProbe| -> Result<FactorResult, ExcitationError> {
        let found = search_udpe(probe, x, delta, ladder, opts)?;
        Ok(FactorResult {
            pass: found.is_some(),
            found,
        })
    };
    let factor_results = factors.iter().map(search).collect::<Result<Vec<_>, _>>()?;
    let mut power_results = Vec::new();
    for &p in powers {
        let mut probe = first.clone();
        let pp = product_phi.clone();
        probe.phi = Arc::new(move |t, z| vec![pp(t, z).powi(p)]);
        power_results.push((p, search(&probe)?));
    }
    let all_pass = factor_results.iter().all(|f| f.pass) && power_results.iter().all(|(_, f)| f.pass);
    let (implication_holds, note) = if product_verdict.pass {
        (all_pass, if all_pass { "product PE; all factors and powers PE" } else { "product PE but some factor or power is not" })
    } else {
        (true, "product not PE")
    };
    Ok(ProductReport {
        product: product_verdict,
        factors: factor_results,
        powers: power_results,
        implication_holds,
        note: note.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{make_heat, HeatKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, TAU};

    fn cos_probe(horizon: f64) -> ExcitationProbe {
        ExcitationProbe::scalar(|t, x| x * x * t.cos(), (0.0, horizon))
    }

    #[test]
    fn cosine_signal_passes() {
        let v = check_udpe(&cos_probe(40.0), &[1.0], 0.5, TAU, 0.9, SampleOptions::default()).unwrap();
        assert!(v.pass, "{v:?}");
        assert!((v.min_mass - 1.0).abs() < 1e-2);
    }

    #[test]
    fn fading_signal_fails_late() {
        let probe = ExcitationProbe::scalar(|t, x| x * x / (1.0 + t * t), (0.0, 1000.0));
        let v = check_udpe(&probe, &[1.0], 0.1, 10.0, 0.01, SampleOptions::default()).unwrap();
        assert!(!v.pass);
        let w = v.witness.unwrap();
        assert!(w.t > 100.0, "{w:?}");
        assert!(window_mass(&probe, w.t, &w.z, 10.0) < 0.01);
    }

    #[test]
    fn zero_signal_fails() {
        let probe = ExcitationProbe::scalar(|_, _| 0.0, (0.0, 20.0));
        let v = check_udpe(&probe, &[1.0], 0.5, TAU, 1e-3, SampleOptions::default()).unwrap();
        assert!(!v.pass);
        assert_eq!(v.min_mass, 0.0);
    }

    #[test]
    fn check_rejects_bad_inputs() {
        let probe = cos_probe(10.0);
        assert_eq!(
            check_udpe(&probe, &[0.0], 0.5, TAU, 0.9, SampleOptions::default()),
            Err(ExcitationError::ZeroSplit)
        );
        assert!(matches!(
            check_udpe(&probe, &[1.0], 0.5, 11.0, 0.9, SampleOptions::default()),
            Err(ExcitationError::WindowTooLong { .. })
        ));
    }

    #[test]
    fn witnesses_really_violate_the_bound() {
        let probe = ExcitationProbe::scalar(|t, x| x * (t.sin() + 0.2), (0.0, 30.0));
        let v = check_udpe(&probe, &[1.0], 0.3, 3.0, 5.0, SampleOptions::default()).unwrap();
        assert!(!v.pass);
        let w = v.witness.unwrap();
        let direct = window_mass(&probe, w.t, &w.z, v.window);
        assert!((direct - w.mass).abs() < 1e-9);
        assert!(direct < 5.0);
    }

    #[test]
    fn verdicts_are_shift_uniform_for_periodic_signals() {
        let a = cos_probe(30.0);
        let b = cos_probe(30.0).with_horizon(TAU, 30.0 + TAU);
        for mu in [0.5, 0.99, 1.2] {
            let va = check_udpe(&a, &[1.0], 0.5, TAU, mu, SampleOptions::default()).unwrap();
            let vb = check_udpe(&b, &[1.0], 0.5, TAU, mu, SampleOptions::default()).unwrap();
            assert_eq!(va.pass, vb.pass);
        }
    }

    #[test]
    fn profile_of_cosine_signal() {
        let opts = ProfileOptions::default();
        let p = estimate_pe_profile_at(&cos_probe(30.0), 1, 1.0, &[0.5, 1.0], opts).unwrap();
        assert!(p.theta.iter().all(|t| *t <= TAU + 1e-9));
        assert!((p.gamma[0] - 1.0).abs() < 1e-3, "{p:?}");
        assert!((p.gamma[1] - 4.0).abs() < 4e-3);
        assert_eq!(p.gamma_at(0.7), p.gamma[0]);
        assert_eq!(p.gamma_at(0.1), 0.0);
        assert_eq!(p.rows()[1], [1.0, p.theta[1], p.gamma[1]]);
    }

    #[test]
    fn profile_of_zero_signal_is_not_pe() {
        let probe = ExcitationProbe::scalar(|_, _| 0.0, (0.0, 30.0));
        let p = estimate_pe_profile(&probe, 1, 1.0, 3, ProfileOptions::default()).unwrap();
        assert!(p.not_pe.iter().all(|b| *b));
        assert!(!p.is_pe_everywhere());
    }

    #[test]
    fn profile_scales_linearly_with_signal() {
        let base = ExcitationProbe::new(|t, x| vec![x[0] * x[0] * (t.cos() + 0.3 * x[1])], vec![0], (0.0, 30.0));
        let scaled = ExcitationProbe::new(|t, x| vec![3.5 * x[0] * x[0] * (t.cos() + 0.3 * x[1])], vec![0], (0.0, 30.0));
        let opts = ProfileOptions::default();
        let a = estimate_pe_profile(&base, 2, 1.0, 3, opts).unwrap();
        let b = estimate_pe_profile(&scaled, 2, 1.0, 3, opts).unwrap();
        for k in 0..3 {
            assert_eq!(a.theta[k], b.theta[k]);
            assert!((b.gamma[k] / a.gamma[k] - 3.5).abs() < 1e-6 * 3.5);
        }
    }

    #[test]
    fn doubling_delta_never_shrinks_theta() {
        let probe = ExcitationProbe::new(|t, x| vec![x[0] * (t.cos() + x[1] * (2.0 * t).sin())], vec![0], (0.0, 30.0));
        let opts = ProfileOptions::default();
        let radii = [0.25, 0.5];
        let a = estimate_pe_profile_at(&probe, 2, 0.5, &radii, opts).unwrap();
        let b = estimate_pe_profile_at(&probe, 2, 1.0, &radii, opts).unwrap();
        for k in 0..2 {
            assert!(b.theta[k] >= a.theta[k]);
        }
    }

    #[test]
    fn steady_state_gain_closed_form_and_quadrature_agree() {
        let heat = make_heat(HeatKind::QuadraticSine { kappa: 1.0, freq: 1.0 }, 2).unwrap();
        let closed = SteadyStateGain::from_heat(heat, GainMode::ClosedForm).unwrap();
        let quad = SteadyStateGain::from_heat(heat, GainMode::Quadrature).unwrap();
        for &(t, x2) in &[(0.0, 1.0), (1.3, -0.7), (PI, 2.0), (50.0, 0.4)] {
            let expected = x2 * x2 * (f64::cos(t) + f64::sin(t)) / 2.0;
            assert!((closed.value(t, &[x2]) - expected).abs() < 1e-14);
            assert!((quad.value(t, &[x2]) - expected).abs() < 1e-9);
        }
        assert_eq!(closed.value(3.0, &[0.0]), 0.0);
        assert!(quad.truncation_error_bound(1.0) < 1e-12);
    }

    #[test]
    fn steady_state_gain_solves_the_filter_equation() {
        let heat = make_heat(HeatKind::Fading { kappa: 1.5 }, 2).unwrap();
        let gains = [
            SteadyStateGain::from_heat(make_heat(HeatKind::QuadraticSine { kappa: 2.0, freq: 1.3 }, 2).unwrap(), GainMode::ClosedForm).unwrap(),
            SteadyStateGain::from_heat(heat, GainMode::Quadrature).unwrap(),
        ];
        let dt = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for g in &gains {
            for _ in 0..100 {
                let t: f64 = rng.gen_range(-5.0..20.0);
                let xi = [rng.gen_range(-1.5..1.5)];
                let d = (g.value(t + dt, &xi) - g.value(t - dt, &xi)) / (2.0 * dt);
                let residual = d + g.value(t, &xi) - g.psi(t, &xi);
                assert!(residual.abs() <= 10.0 * dt * dt, "residual {residual}");
            }
        }
    }

    #[test]
    fn unregistered_closed_form_is_an_error() {
        let heat = make_heat(HeatKind::Fading { kappa: 1.0 }, 2).unwrap();
        assert!(matches!(
            SteadyStateGain::from_heat(heat, GainMode::ClosedForm),
            Err(ExcitationError::UnregisteredClosedForm)
        ));
        let zero = SteadyStateGain::from_heat(make_heat(HeatKind::Zero, 2).unwrap(), GainMode::ClosedForm).unwrap();
        assert_eq!(zero.value(1.0, &[2.0]), 0.0);
    }

    #[test]
    fn filtering_preserves_excitation() {
        let probe = cos_probe(40.0);
        let pts = vec![vec![1.0]];
        let unit = filtered_excitation_preserves_pe(&probe, 1.0, 0.0, &pts, 0.5, TAU, 0.5, SampleOptions::default()).unwrap();
        assert!(unit.pass, "{unit:?}");
        let fast = filtered_excitation_preserves_pe(&probe, 100.0, 0.0, &pts, 0.5, TAU, 0.9 / 100.0, SampleOptions::default()).unwrap();
        assert!(fast.pass, "{fast:?}");
        let zero = ExcitationProbe::scalar(|_, _| 0.0, (0.0, 40.0));
        let dead = filtered_excitation_preserves_pe(&zero, 1.0, 0.0, &pts, 0.5, TAU, 1e-3, SampleOptions::default()).unwrap();
        assert!(!dead.pass);
    }

    #[test]
    fn products_and_powers() {
        let ladder: Vec<f64> = (1..=3).map(|k| k as f64 * TAU).collect();
        let a = cos_probe(40.0);
        let b = ExcitationProbe::scalar(|t, _| 1.0 + 0.5 * t.sin(), (0.0, 40.0));
        let r = product_factor_check(&[a.clone(), b], &[1.0], 0.5, TAU, 0.1, &[2, 3], &ladder, SampleOptions::default()).unwrap();
        assert!(r.product.pass);
        assert!(r.factors.iter().all(|f| f.pass));
        assert!(r.powers.iter().all(|(_, f)| f.pass));
        assert!(r.implication_holds);
        let cube = r.powers.iter().find(|(p, _)| *p == 3).unwrap().1.found.unwrap();
        assert!(cube.1 > 0.0);

        let zero = ExcitationProbe::scalar(|_, _| 0.0, (0.0, 40.0));
        let r = product_factor_check(&[a, zero], &[1.0], 0.5, TAU, 0.1, &[], &ladder, SampleOptions::default()).unwrap();
        assert!(!r.product.pass);
        assert!(r.implication_holds);
        assert_eq!(r.note, "product not PE");
    }
}
