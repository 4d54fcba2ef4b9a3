use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MatrosovError;
use crate::dynamics::{norm, sample_region, RegionSpec, TimeVaryingSystem};
use crate::excitation::PeProfile;

/// `(t, state) → ℝ`
pub type TimeMap = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// `(t, state) → ℝᵏ`
pub type TimeVecMap = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
/// `(X, ψ) → ℝ`
pub type YMap = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Step of the central difference used for Lie derivatives.
const LIE_STEP: f64 = 1e-4;

/// A bound `Y(X, ψ) = negative(X, ψ) + ν·basis(X, ψ)` on the derivative of
/// one auxiliary function. `ν` is calibrated by sampling.
#[derive(Clone)]
pub struct YBound {
    pub label: String,
    pub negative: YMap,
    pub basis: Option<YMap>,
    pub nu: f64,
}

impl fmt::Debug for YBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("YBound")
            .field("label", &self.label)
            .field("nu", &self.nu)
            .field("has_basis", &self.basis.is_some())
            .finish()
    }
}

impl YBound {
    pub fn exact<F>(label: impl Into<String>, negative: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            negative: Arc::new(negative),
            basis: None,
            nu: 0.0,
        }
    }

    pub fn with_basis<F, G>(label: impl Into<String>, negative: F, basis: G) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            negative: Arc::new(negative),
            basis: Some(Arc::new(basis)),
            nu: 0.0,
        }
    }

    pub fn eval(&self, x: &[f64], psi: &[f64]) -> f64 {
        let neg = (self.negative)(x, psi);
        match &self.basis {
            Some(b) => neg + self.nu * b(x, psi),
            None => neg,
        }
    }
}

/// Product of balls `‖X[range]‖ ≤ radius` describing where the bounds must hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallProduct {
    pub blocks: Vec<(Range<usize>, f64)>,
}

impl BallProduct {
    pub fn single(dim: usize, radius: f64) -> Self {
        Self {
            blocks: vec![(0..dim, radius)],
        }
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|(r, _)| r.end).max().unwrap_or(0)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.blocks
            .iter()
            .all(|(r, rad)| norm(&x[r.clone()]) <= rad * (1.0 + 1e-12))
    }

    /// Low-discrepancy points; each block is sampled independently.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, MatrosovError> {
        let dim = self.dim();
        let mut out = vec![vec![0.0; dim]; count];
        for (b, (range, radius)) in self.blocks.iter().enumerate() {
            let region = RegionSpec::ball(*radius, range.len())?;
            let pts = sample_region(&region, count, seed.wrapping_add(7919 * b as u64))?;
            // Rotate blocks against each other so boundary points do not line up.
            let shift = (b * 17) % count.max(1);
            for (k, x) in out.iter_mut().enumerate() {
                let p = &pts[(k + shift) % count];
                x[range.clone()].copy_from_slice(p);
            }
        }
        Ok(out)
    }
}

/// Outcome of fitting the generic constants `ν` and the bound `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CalibrationReport {
    pub samples: usize,
    pub nu: Vec<f64>,
    /// Samples where a bound had no basis term to absorb a positive excess.
    pub uncovered: Vec<usize>,
    /// Largest excess `V̇ − Y` left at uncovered samples.
    pub uncovered_excess: Vec<f64>,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub samples: usize,
    /// Times are drawn from `[0, t_span]`.
    pub t_span: f64,
    pub seed: u64,
    pub inflation: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            samples: 4000,
            t_span: 4.0 * std::f64::consts::PI,
            seed: 1,
            inflation: 1.1,
        }
    }
}

/// Auxiliary functions `V₁…V_j` with their derivative bounds `Y₁…Y_j`.
///
/// `V` and `φ` act on plant states; `Y` acts on `(X, ψ)` where `X` is the
/// image of the plant state under `to_x` (identity for most plants).
#[derive(Clone)]
pub struct AuxiliaryFamily {
    pub label: String,
    pub plant: TimeVaryingSystem,
    pub v: Vec<TimeMap>,
    pub phi: TimeVecMap,
    pub y: Vec<YBound>,
    pub to_x: TimeVecMap,
    /// Inverse of `to_x`: a plant state with the given `X` at time `t`.
    pub lift: TimeVecMap,
    pub region: BallProduct,
    pub psi_dim: usize,
    /// Radius `Δ` the family was built for.
    pub big_delta: f64,
    /// Bound on `|Vᵢ|` and `‖φ‖` over the region.
    pub mu: f64,
    pub calibration: CalibrationReport,
    /// Excitation tables behind the integral bounds, labelled.
    pub profiles: Vec<(String, PeProfile)>,
}

impl fmt::Debug for AuxiliaryFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuxiliaryFamily")
            .field("label", &self.label)
            .field("j", &self.j())
            .field("m", &self.psi_dim)
            .field("big_delta", &self.big_delta)
            .field("mu", &self.mu)
            .field("y", &self.y)
            .finish_non_exhaustive()
    }
}

impl AuxiliaryFamily {
    pub fn j(&self) -> usize {
        self.v.len()
    }

    pub fn x_dim(&self) -> usize {
        self.region.dim()
    }

    pub fn y_values(&self, x: &[f64], psi: &[f64]) -> Vec<f64> {
        self.y.iter().map(|y| y.eval(x, psi)).collect()
    }

    pub fn v_values(&self, t: f64, state: &[f64]) -> Vec<f64> {
        self.v.iter().map(|v| v(t, state)).collect()
    }

    /// `Y(X(t, state), φ(t, state))`
    pub fn y_along(&self, t: f64, state: &[f64]) -> Vec<f64> {
        let x = (self.to_x)(t, state);
        let psi = (self.phi)(t, state);
        self.y_values(&x, &psi)
    }

    /// Central-difference derivative of every `Vᵢ` along the plant vector field.
    pub fn lie_derivatives(&self, t: f64, state: &[f64]) -> Vec<f64> {
        let f = self.plant.eval(t, state);
        let h = LIE_STEP;
        let fwd: Vec<f64> = state.iter().zip(&f).map(|(x, d)| x + h * d).collect();
        let bwd: Vec<f64> = state.iter().zip(&f).map(|(x, d)| x - h * d).collect();
        self.v
            .iter()
            .map(|v| (v(t + h, &fwd) - v(t - h, &bwd)) / (2.0 * h))
            .collect()
    }

    /// Replace one bound (used for falsification controls).
    pub fn with_y(mut self, index: usize, bound: YBound) -> Self {
        self.y[index] = bound;
        self
    }

    /// Shift one bound by a constant.
    pub fn with_y_offset(self, index: usize, offset: f64) -> Self {
        let old = self.y[index].clone();
        let label = format!("{} + {offset}", old.label);
        let shifted = YBound::exact(label, move |x, psi| old.eval(x, psi) + offset);
        self.with_y(index, shifted)
    }

    /// Interior samples of `region × [0, t_span]`, each paired with a copy
    /// whose blocks sit on their sphere, where the suprema usually are.
    fn calibration_points(&self, opts: CalibrationOptions) -> Result<Vec<(f64, Vec<f64>)>, MatrosovError> {
        let interior = self.region.sample(opts.samples, opts.seed)?;
        let boundary: Vec<Vec<f64>> = interior
            .iter()
            .map(|x| {
                let mut y = x.clone();
                for (range, radius) in &self.region.blocks {
                    let n = norm(&x[range.clone()]);
                    if n > 0.0 {
                        y[range.clone()].iter_mut().for_each(|v| *v *= radius / n);
                    }
                }
                y
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xca11b);
        Ok(interior
            .into_iter()
            .chain(boundary)
            .map(|x| {
                let t = rng.gen_range(0.0..opts.t_span);
                let state = (self.lift)(t, &x);
                (t, state)
            })
            .collect())
    }

    /// Fit each `ν` as `inflation ×` the sampled supremum of
    /// `(V̇ − negative)/basis`, and `μ` as `inflation ×` the sampled supremum
    /// of `|Vᵢ|` and `‖φ‖`.
    pub fn calibrate(&mut self, opts: CalibrationOptions) -> Result<(), MatrosovError> {
        let pts = self.calibration_points(opts)?;
        let j = self.j();
        struct Acc {
            ratio: Vec<f64>,
            uncovered: Vec<usize>,
            excess: Vec<f64>,
            bound: f64,
        }
        let empty = || Acc {
            ratio: vec![0.0; j],
            uncovered: vec![0; j],
            excess: vec![0.0; j],
            bound: 0.0,
        };
        let acc = pts
            .par_iter()
            .fold(empty, |mut acc, (t, s)| {
                let x = (self.to_x)(*t, s);
                let psi = (self.phi)(*t, s);
                let vdot = self.lie_derivatives(*t, s);
                for (i, y) in self.y.iter().enumerate() {
                    let excess = vdot[i] - (y.negative)(&x, &psi);
                    if excess <= 0.0 {
                        continue;
                    }
                    let b = y.basis.as_ref().map(|b| b(&x, &psi)).unwrap_or(0.0);
                    if b > 1e-12 {
                        acc.ratio[i] = acc.ratio[i].max(excess / b);
                    } else if excess > 1e-7 {
                        acc.uncovered[i] += 1;
                        acc.excess[i] = acc.excess[i].max(excess);
                    }
                }
                let vmax = self.v_values(*t, s).into_iter().map(f64::abs).fold(0.0, f64::max);
                acc.bound = acc.bound.max(vmax).max(norm(&psi));
                acc
            })
            .reduce(empty, |mut a, b| {
                for i in 0..j {
                    a.ratio[i] = a.ratio[i].max(b.ratio[i]);
                    a.uncovered[i] += b.uncovered[i];
                    a.excess[i] = a.excess[i].max(b.excess[i]);
                }
                a.bound = a.bound.max(b.bound);
                a
            });
        for (i, y) in self.y.iter_mut().enumerate() {
            if y.basis.is_some() {
                y.nu = opts.inflation * acc.ratio[i];
            }
        }
        self.mu = opts.inflation * acc.bound;
        self.calibration = CalibrationReport {
            samples: pts.len(),
            nu: self.y.iter().map(|y| y.nu).collect(),
            uncovered: acc.uncovered,
            uncovered_excess: acc.excess,
            mu: self.mu,
        };
        Ok(())
    }

    /// Check `max(|Vᵢ|, ‖φ‖) ≤ μ` on fresh interior and boundary samples of `ℝ × region`.
    pub fn check_bounds(&self, samples: usize, seed: u64) -> Result<BoundCheck, MatrosovError> {
        let opts = CalibrationOptions {
            samples,
            seed,
            ..CalibrationOptions::default()
        };
        let pts = self.calibration_points(opts)?;
        let worst = pts
            .par_iter()
            .map(|(t, s)| {
                let v = self.v_values(*t, s).into_iter().map(f64::abs).fold(0.0, f64::max);
                v.max(norm(&(self.phi)(*t, s)))
            })
            .reduce(|| 0.0, f64::max);
        Ok(BoundCheck {
            samples: pts.len(),
            worst,
            mu: self.mu,
            pass: worst <= self.mu,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub samples: usize,
    pub worst: f64,
    pub mu: f64,
    pub pass: bool,
}

/// `−∫_t^{t+W} e^{t−τ} g(τ) dτ` by composite Simpson with step 0.05.
pub(crate) fn integral_tail(g: impl Fn(f64) -> f64, t: f64, window: f64) -> f64 {
    const STEP: f64 = 0.05;
    let mut n = (window / STEP).ceil() as usize;
    if n % 2 == 1 {
        n += 1;
    }
    let h = window / n as f64;
    let mut acc = 0.0;
    for k in 0..=n {
        let s = k as f64 * h;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * (-s).exp() * g(t + s);
    }
    -acc * h / 3.0
}
