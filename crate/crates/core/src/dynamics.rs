//! Time-varying ODE representation, fixed-step RK4 integration and
//! deterministic sampling of balls and annuli.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Right-hand side `f(t, x)` of `ẋ = f(t, x)`.
pub type Rhs = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Default norm beyond which a solution is declared divergent.
pub const DEFAULT_BLOWUP: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("horizon must satisfy t_end > t0 (t0 = {t0}, t_end = {t_end})")]
    BadHorizon { t0: f64, t_end: f64 },
    #[error("step size must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("state has length {got}, system dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("solution diverged after t = {last_valid_t}")]
    Divergence { last_valid_t: f64 },
    #[error("right-hand side returned a non-finite value at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("sample count must be at least 1")]
    EmptySample,
}

/// A system `ẋ = f(t, x)` with fixed state dimension.
#[derive(Clone)]
pub struct TimeVaryingSystem {
    dim: usize,
    label: String,
    rhs: Rhs,
}

impl fmt::Debug for TimeVaryingSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeVaryingSystem")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish()
    }
}

impl TimeVaryingSystem {
    pub fn new<F>(dim: usize, label: impl Into<String>, rhs: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        assert!(dim > 0, "state dimension must be positive");
        Self {
            dim,
            label: label.into(),
            rhs: Arc::new(rhs),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Evaluates `f(t, x)`. Panics if `x` has the wrong length.
    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "state length mismatch for {}", self.label);
        let out = (self.rhs)(t, x);
        debug_assert_eq!(out.len(), self.dim);
        out
    }

    pub fn try_eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        if x.len() != self.dim {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok((self.rhs)(t, x))
    }
}

/// Uniformly sampled solution `x(·, t0, x0)`.
///
/// Sample `k` sits at `t0 + k·dt`, except that the last sample sits at
/// `t_end` when the horizon is not an integer number of steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub t_end: f64,
    pub states: Vec<Vec<f64>>,
    pub label: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        if k + 1 == self.states.len() && k > 0 {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt
        }
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(move |k| self.time(k))
    }

    /// Largest state norm along the path.
    pub fn sup_norm(&self) -> f64 {
        self.states.iter().map(|x| norm(x)).fold(0.0, f64::max)
    }

    /// True when every sample keeps a norm of at most `radius`.
    pub fn stays_within(&self, radius: f64) -> bool {
        self.states.iter().all(|x| norm(x) <= radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub blowup: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            blowup: DEFAULT_BLOWUP,
        }
    }
}

/// Classical fixed-step RK4 over `[t0, t_end]` with the default blow-up bound.
pub fn integrate(
    system: &TimeVaryingSystem,
    t0: f64,
    x0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<Trajectory, DynamicsError> {
    integrate_with(system, t0, x0, t_end, dt, IntegrateOptions::default())
}

pub fn integrate_with(
    system: &TimeVaryingSystem,
    t0: f64,
    x0: &[f64],
    t_end: f64,
    dt: f64,
    opts: IntegrateOptions,
) -> Result<Trajectory, DynamicsError> {
    if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
        return Err(DynamicsError::BadHorizon { t0, t_end });
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(DynamicsError::BadStep(dt));
    }
    if x0.len() != system.dim() {
        return Err(DynamicsError::DimensionMismatch {
            expected: system.dim(),
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFinite { t: t0 });
    }

    // Tolerate round-off so that an exact multiple of dt does not gain a sliver step.
    let span = (t_end - t0) / dt;
    let steps = (span - 1e-9).ceil().max(1.0) as usize;

    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.to_vec());
    let mut x = x0.to_vec();
    let mut t = t0;
    for k in 0..steps {
        let h = if k + 1 == steps { t_end - t } else { dt };
        x = rk4_step(system, t, &x, h)?;
        t = if k + 1 == steps { t_end } else { t0 + (k + 1) as f64 * dt };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite { t });
        }
        if norm(&x) > opts.blowup {
            return Err(DynamicsError::Divergence {
                last_valid_t: t - h,
            });
        }
        states.push(x.clone());
    }
    Ok(Trajectory {
        t0,
        dt,
        t_end,
        states,
        label: system.label().to_string(),
    })
}

fn rk4_step(
    system: &TimeVaryingSystem,
    t: f64,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>, DynamicsError> {
    let eval = |tt: f64, xx: &[f64]| -> Result<Vec<f64>, DynamicsError> {
        let v = (system.rhs)(tt, xx);
        if v.iter().any(|c| !c.is_finite()) {
            Err(DynamicsError::NonFinite { t: tt })
        } else {
            Ok(v)
        }
    };
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect() };

    let k1 = eval(t, x)?;
    let k2 = eval(t + 0.5 * h, &axpy(0.5 * h, &k1))?;
    let k3 = eval(t + 0.5 * h, &axpy(0.5 * h, &k2))?;
    let k4 = eval(t + h, &axpy(h, &k3))?;
    Ok((0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Ball,
    Annulus,
}

/// The ball `B(r)` or the annulus `H(δ, Δ) = {δ ≤ ‖x‖ ≤ Δ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub kind: RegionKind,
    pub inner: f64,
    pub outer: f64,
    pub dim: usize,
}

impl RegionSpec {
    pub fn ball(radius: f64, dim: usize) -> Result<Self, DynamicsError> {
        let r = Self {
            kind: RegionKind::Ball,
            inner: 0.0,
            outer: radius,
            dim,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn annulus(inner: f64, outer: f64, dim: usize) -> Result<Self, DynamicsError> {
        let r = Self {
            kind: RegionKind::Annulus,
            inner,
            outer,
            dim,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.dim == 0 {
            return Err(DynamicsError::InvalidRegion("dimension must be positive".into()));
        }
        if !(self.outer >= 0.0) || !self.outer.is_finite() {
            return Err(DynamicsError::InvalidRegion(format!("outer radius {}", self.outer)));
        }
        match self.kind {
            RegionKind::Ball if self.inner != 0.0 => Err(DynamicsError::InvalidRegion(
                "a ball has inner radius 0".into(),
            )),
            RegionKind::Annulus if !(self.inner > 0.0) || self.inner > self.outer => {
                Err(DynamicsError::InvalidRegion(format!(
                    "annulus needs 0 < inner <= outer, got ({}, {})",
                    self.inner, self.outer
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let r = norm(x);
        let slack = 1e-12 * self.outer.max(1.0);
        r <= self.outer + slack && r + slack >= self.inner
    }
}

const PRIMES: [u64; 48] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191,
    193, 197, 199, 211, 223,
];

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    out
}

/// Deterministic point set in a ball or annulus.
///
/// Boundary points (`±outer·eᵢ`, and `±inner·eᵢ` for annuli) come first,
/// the rest is a randomly shifted Halton sequence mapped to the region with
/// volume-uniform radius. The same seed always yields the same list.
pub fn sample_region(region: &RegionSpec, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, DynamicsError> {
    region.validate()?;
    if count == 0 {
        return Err(DynamicsError::EmptySample);
    }
    let d = region.dim;
    let coords = 2 * d.div_ceil(2) + 1;
    if coords > PRIMES.len() {
        return Err(DynamicsError::InvalidRegion(format!("dimension {d} too large for sampler")));
    }

    let mut out = Vec::with_capacity(count);
    let n_boundary = count.min(2 * d).max(1);
    for k in 0..n_boundary {
        let axis = (k / 2) % d;
        let (sign, radius) = match region.kind {
            RegionKind::Ball => (if k % 2 == 0 { 1.0 } else { -1.0 }, region.outer),
            RegionKind::Annulus if k % 2 == 1 => (1.0, region.inner),
            RegionKind::Annulus => (1.0, region.outer),
        };
        let mut p = vec![0.0; d];
        p[axis] = sign * radius;
        out.push(p);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..coords).map(|_| rng.gen::<f64>()).collect();
    let skip = 1 + (seed % 1024);
    let lo = region.inner.powi(d as i32);
    let hi = region.outer.powi(d as i32);
    let mut index = skip;
    while out.len() < count {
        let u: Vec<f64> = (0..coords)
            .map(|j| (radical_inverse(index, PRIMES[j]) + shift[j]).fract())
            .collect();
        index += 1;
        let mut dir = Vec::with_capacity(d + 1);
        for pair in 0..d.div_ceil(2) {
            let u1 = u[1 + 2 * pair].max(1e-300);
            let u2 = u[2 + 2 * pair];
            let rad = (-2.0 * u1.ln()).sqrt();
            let ang = std::f64::consts::TAU * u2;
            dir.push(rad * ang.cos());
            dir.push(rad * ang.sin());
        }
        dir.truncate(d);
        let n = norm(&dir);
        if n < 1e-12 {
            continue;
        }
        let r = (lo + u[0] * (hi - lo)).powf(1.0 / d as f64).clamp(region.inner, region.outer);
        out.push(dir.iter().map(|v| v * r / n).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> TimeVaryingSystem {
        TimeVaryingSystem::new(1, "decay", |_, x| vec![-x[0]])
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let traj = integrate(&decay(), 0.0, &[1.0], 1.0, 0.01).unwrap();
        assert_eq!(traj.len(), 101);
        assert!((traj.last()[0] - (-1.0f64).exp()).abs() < 1e-6);
        assert!((traj.time(100) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_horizons() {
        let sys = decay();
        assert!(matches!(
            integrate(&sys, 1.0, &[1.0], 1.0, 0.1),
            Err(DynamicsError::BadHorizon { .. })
        ));
        let one = integrate(&sys, 0.0, &[1.0], 0.1, 0.1).unwrap();
        assert_eq!(one.len(), 2);
        assert!(matches!(integrate(&sys, 0.0, &[1.0], 1.0, 0.0), Err(DynamicsError::BadStep(_))));
        assert!(matches!(
            integrate(&sys, 0.0, &[1.0, 2.0], 1.0, 0.1),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn partial_last_step_lands_on_end() {
        let traj = integrate(&decay(), 0.0, &[1.0], 0.25, 0.1).unwrap();
        assert_eq!(traj.len(), 4);
        assert_eq!(traj.time(3), 0.25);
        assert!((traj.time(2) - 0.2).abs() < 1e-15);
        assert!((traj.last()[0] - (-0.25f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn divergence_and_non_finite_are_errors() {
        let grow = TimeVaryingSystem::new(1, "grow", |_, x| vec![x[0]]);
        match integrate(&grow, 0.0, &[1.0], 100.0, 0.01) {
            Err(DynamicsError::Divergence { last_valid_t }) => {
                assert!(last_valid_t > 20.0 && last_valid_t < 21.0, "{last_valid_t}")
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        let nan = TimeVaryingSystem::new(1, "nan", |t, _| vec![if t > 0.5 { f64::NAN } else { 0.0 }]);
        assert!(matches!(integrate(&nan, 0.0, &[1.0], 1.0, 0.1), Err(DynamicsError::NonFinite { .. })));
    }

    #[test]
    fn region_validation() {
        assert!(RegionSpec::annulus(0.0, 1.0, 2).is_err());
        assert!(RegionSpec::annulus(0.0, 0.0, 2).is_err());
        assert!(RegionSpec::annulus(2.0, 1.0, 2).is_err());
        assert!(RegionSpec::ball(1.0, 0).is_err());
        assert!(sample_region(&RegionSpec::ball(1.0, 2).unwrap(), 0, 1).is_err());
    }

    #[test]
    fn ball_and_annulus_containment_and_boundary() {
        let ball = RegionSpec::ball(1.0, 2).unwrap();
        let pts = sample_region(&ball, 100, 3).unwrap();
        assert_eq!(pts.len(), 100);
        assert!(pts.iter().all(|p| norm(p) <= 1.0 + 1e-12));
        assert!(pts.iter().any(|p| (norm(p) - 1.0).abs() < 1e-12));

        let ann = RegionSpec::annulus(0.5, 1.0, 3).unwrap();
        let pts = sample_region(&ann, 200, 3).unwrap();
        assert!(pts.iter().all(|p| ann.contains(p)));
        assert!(pts.iter().any(|p| (norm(p) - 0.5).abs() < 1e-12));
        assert!(pts.iter().any(|p| (norm(p) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let ball = RegionSpec::ball(2.0, 4).unwrap();
        assert_eq!(sample_region(&ball, 50, 11).unwrap(), sample_region(&ball, 50, 11).unwrap());
        assert_ne!(sample_region(&ball, 50, 11).unwrap(), sample_region(&ball, 50, 12).unwrap());
    }
}
