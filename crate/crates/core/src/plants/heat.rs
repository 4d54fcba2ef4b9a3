use serde::{Deserialize, Serialize};

use super::PlantError;

/// Default truncation window for steady-state convolutions (error factor e⁻³⁰).
pub const DEFAULT_TRUNCATION: f64 = 30.0;

/// Scalar time profile `s(t)` multiplying a quadratic form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Modulation {
    /// `sin(freq·t + phase)`
    Sine { freq: f64, #[serde(default)] phase: f64 },
    /// `1 / (1 + t²)`; its derivative is integrable, so it carries no lasting excitation.
    Fading,
    Zero,
}

impl Modulation {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Modulation::Sine { freq, phase } => (freq * t + phase).sin(),
            Modulation::Fading => 1.0 / (1.0 + t * t),
            Modulation::Zero => 0.0,
        }
    }

    pub fn deriv(&self, t: f64) -> f64 {
        match *self {
            Modulation::Sine { freq, phase } => freq * (freq * t + phase).cos(),
            Modulation::Fading => -2.0 * t / (1.0 + t * t).powi(2),
            Modulation::Zero => 0.0,
        }
    }

    pub fn second_deriv(&self, t: f64) -> f64 {
        match *self {
            Modulation::Sine { freq, phase } => -freq * freq * (freq * t + phase).sin(),
            Modulation::Fading => (6.0 * t * t - 2.0) / (1.0 + t * t).powi(3),
            Modulation::Zero => 0.0,
        }
    }

    /// Suprema of `|s|`, `|s'|`, `|s''|` over the real line.
    pub fn sup_abs(&self) -> [f64; 3] {
        match *self {
            Modulation::Sine { freq, .. } => [1.0, freq.abs(), freq * freq],
            Modulation::Fading => [1.0, 3.0 * 3f64.sqrt() / 8.0, 2.0],
            Modulation::Zero => [0.0; 3],
        }
    }

    /// Closed form of `∫_{-∞}^t e^{-(t-τ)} s'(τ) dτ` when one is registered.
    pub fn steady_closed_form(&self, t: f64) -> Option<f64> {
        match *self {
            Modulation::Sine { freq, phase } => {
                let a = freq * t + phase;
                Some(freq * (a.cos() + freq * a.sin()) / (1.0 + freq * freq))
            }
            Modulation::Zero => Some(0.0),
            Modulation::Fading => None,
        }
    }

    /// Truncated convolution `∫_{t-W}^t e^{-(t-τ)} s'(τ) dτ` by composite Simpson.
    pub fn steady_quadrature(&self, t: f64, truncation: f64) -> f64 {
        simpson_kernel(|tau| self.deriv(tau), t, truncation)
    }

    /// Closed form if available, otherwise quadrature.
    pub fn steady(&self, t: f64) -> f64 {
        self.steady_closed_form(t)
            .unwrap_or_else(|| self.steady_quadrature(t, DEFAULT_TRUNCATION))
    }
}

/// `∫_{t-W}^t e^{-(t-τ)} f(τ) dτ` by composite Simpson with step ≤ 0.01.
pub(crate) fn simpson_kernel(f: impl Fn(f64) -> f64, t: f64, window: f64) -> f64 {
    let mut n = (window / 0.01).ceil() as usize;
    if n % 2 == 1 {
        n += 1;
    }
    let h = window / n as f64;
    let mut acc = 0.0;
    for k in 0..=n {
        let s = k as f64 * h; // s = t - τ
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * (-s).exp() * f(t - s);
    }
    acc * h / 3.0
}

/// `κ‖v‖² s(t)` with all partials in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulatedQuadratic {
    pub kappa: f64,
    pub modulation: Modulation,
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

impl ModulatedQuadratic {
    pub fn zero() -> Self {
        Self {
            kappa: 0.0,
            modulation: Modulation::Zero,
        }
    }

    pub fn value(&self, t: f64, v: &[f64]) -> f64 {
        self.kappa * sq(v) * self.modulation.value(t)
    }

    /// `∂/∂t`
    pub fn dt(&self, t: f64, v: &[f64]) -> f64 {
        self.kappa * sq(v) * self.modulation.deriv(t)
    }

    pub fn grad(&self, t: f64, v: &[f64]) -> Vec<f64> {
        let s = 2.0 * self.kappa * self.modulation.value(t);
        v.iter().map(|a| s * a).collect()
    }

    /// `∂²/∂t∂v`
    pub fn dt_grad(&self, t: f64, v: &[f64]) -> Vec<f64> {
        let s = 2.0 * self.kappa * self.modulation.deriv(t);
        v.iter().map(|a| s * a).collect()
    }

    /// Steady state of `ω̇ = -ω + ∂/∂t(·)` with `v` frozen.
    pub fn steady(&self, t: f64, v: &[f64]) -> f64 {
        self.kappa * sq(v) * self.modulation.steady(t)
    }

    pub fn steady_grad(&self, t: f64, v: &[f64]) -> Vec<f64> {
        let s = 2.0 * self.kappa * self.modulation.steady(t);
        v.iter().map(|a| s * a).collect()
    }
}

/// Serializable choice of heat function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeatKind {
    /// `κ‖z‖² sin(ω t)`
    QuadraticSine {
        #[serde(default = "one")]
        kappa: f64,
        #[serde(default = "one")]
        freq: f64,
    },
    Zero,
    /// `κ‖z‖² / (1 + t²)`
    Fading {
        #[serde(default = "one")]
        kappa: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl HeatKind {
    pub fn from_name(name: &str, kappa: f64, freq: f64) -> Result<Self, PlantError> {
        match name {
            "quadratic_sine" | "a" => Ok(HeatKind::QuadraticSine { kappa, freq }),
            "zero" | "b" => Ok(HeatKind::Zero),
            "fading" | "c" => Ok(HeatKind::Fading { kappa }),
            other => Err(PlantError::UnknownKind(other.to_string())),
        }
    }
}

/// The shaping term `h(t, z)` of the controllers, with `h∘` (trailing
/// coordinate of `z` set to zero), `ψ = ∂h∘/∂t` and its gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatFunction {
    pub kind: HeatKind,
    quad: ModulatedQuadratic,
    z_dim: usize,
}

pub fn make_heat(kind: HeatKind, z_dim: usize) -> Result<HeatFunction, PlantError> {
    if z_dim < 2 {
        return Err(PlantError::Invalid(format!(
            "heat function needs z of dimension >= 2, got {z_dim}"
        )));
    }
    let quad = match kind {
        HeatKind::QuadraticSine { kappa, freq } => {
            if !kappa.is_finite() || !(freq > 0.0) || !freq.is_finite() {
                return Err(PlantError::Invalid(format!("quadratic_sine(kappa={kappa}, freq={freq})")));
            }
            ModulatedQuadratic {
                kappa,
                modulation: Modulation::Sine { freq, phase: 0.0 },
            }
        }
        HeatKind::Zero => ModulatedQuadratic::zero(),
        HeatKind::Fading { kappa } => {
            if !kappa.is_finite() {
                return Err(PlantError::Invalid(format!("fading(kappa={kappa})")));
            }
            ModulatedQuadratic {
                kappa,
                modulation: Modulation::Fading,
            }
        }
    };
    Ok(HeatFunction { kind, quad, z_dim })
}

impl HeatFunction {
    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    /// Length of the restricted argument `ξ`.
    pub fn xi_dim(&self) -> usize {
        self.z_dim - 1
    }

    pub fn quadratic(&self) -> &ModulatedQuadratic {
        &self.quad
    }

    pub fn h(&self, t: f64, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.z_dim);
        self.quad.value(t, z)
    }

    pub fn h_dt(&self, t: f64, z: &[f64]) -> f64 {
        self.quad.dt(t, z)
    }

    pub fn h_grad(&self, t: f64, z: &[f64]) -> Vec<f64> {
        self.quad.grad(t, z)
    }

    /// `h∘(t, ξ) = h(t, (ξ, 0))`
    pub fn h_restricted(&self, t: f64, xi: &[f64]) -> f64 {
        self.quad.value(t, xi)
    }

    pub fn h_restricted_grad(&self, t: f64, xi: &[f64]) -> Vec<f64> {
        self.quad.grad(t, xi)
    }

    pub fn psi(&self, t: f64, xi: &[f64]) -> f64 {
        self.quad.dt(t, xi)
    }

    pub fn psi_grad(&self, t: f64, xi: &[f64]) -> Vec<f64> {
        self.quad.dt_grad(t, xi)
    }

    /// Closed-form steady state `∫_{-∞}^t e^{-(t-τ)} ψ(τ, ξ) dτ`, if registered.
    pub fn steady_closed_form(&self, t: f64, xi: &[f64]) -> Option<f64> {
        self.quad
            .modulation
            .steady_closed_form(t)
            .map(|a| self.quad.kappa * sq(xi) * a)
    }

    /// Non-decreasing bound on `|h|` and all first and second partials on `‖z‖ ≤ r`.
    pub fn bound_rho(&self, r: f64) -> f64 {
        let [s0, s1, s2] = self.quad.modulation.sup_abs();
        let k = self.quad.kappa.abs();
        let value_terms = (r * r) * s0.max(s1).max(s2);
        let grad_terms = 2.0 * r * s0.max(s1);
        let hess_terms = 2.0 * s0;
        k * value_terms.max(grad_terms).max(hess_terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sine_heat_psi_matches_hand_derivative() {
        let heat = make_heat(HeatKind::QuadraticSine { kappa: 1.0, freq: 1.0 }, 2).unwrap();
        for &(t, x2) in &[(0.0, 1.0), (0.7, -0.3), (2.0, 1.5)] {
            assert!((heat.psi(t, &[x2]) - x2 * x2 * f64::cos(t)).abs() < 1e-14);
        }
        assert_eq!(heat.h(1.0, &[0.0, 0.0]), 0.0);
        assert_eq!(heat.psi(1.0, &[0.0]), 0.0);
    }

    #[test]
    fn zero_heat_is_identically_zero() {
        let heat = make_heat(HeatKind::Zero, 3).unwrap();
        assert_eq!(heat.psi(0.3, &[1.0, 2.0]), 0.0);
        assert_eq!(heat.h(0.3, &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn unknown_kind_and_bad_params_rejected() {
        assert!(matches!(HeatKind::from_name("cubic", 1.0, 1.0), Err(PlantError::UnknownKind(_))));
        assert!(make_heat(HeatKind::QuadraticSine { kappa: 1.0, freq: 0.0 }, 2).is_err());
        assert!(make_heat(HeatKind::Zero, 1).is_err());
    }

    #[test]
    fn modulation_derivatives_match_finite_differences() {
        let h = 1e-5;
        for m in [
            Modulation::Sine { freq: 1.7, phase: 0.3 },
            Modulation::Fading,
        ] {
            for &t in &[-2.0, 0.0, 0.4, 3.0] {
                let d = (m.value(t + h) - m.value(t - h)) / (2.0 * h);
                let dd = (m.deriv(t + h) - m.deriv(t - h)) / (2.0 * h);
                assert!((d - m.deriv(t)).abs() < 1e-8);
                assert!((dd - m.second_deriv(t)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn sine_steady_state_matches_quadrature() {
        let m = Modulation::Sine { freq: 1.0, phase: 0.0 };
        for &t in &[0.0, 1.0, PI / 3.0, 100.0] {
            let closed = m.steady_closed_form(t).unwrap();
            assert!((closed - 0.5 * (t.cos() + t.sin())).abs() < 1e-14);
            assert!((closed - m.steady_quadrature(t, 30.0)).abs() < 1e-9);
        }
        assert!(Modulation::Fading.steady_closed_form(0.0).is_none());
    }

    #[test]
    fn bound_rho_dominates_sampled_partials() {
        let heat = make_heat(HeatKind::QuadraticSine { kappa: 2.0, freq: 1.5 }, 2).unwrap();
        for i in 0..50 {
            let t = 0.37 * i as f64;
            let z = [0.9 * (i as f64).sin(), 0.8 * (i as f64 * 0.3).cos()];
            let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
            let rho = heat.bound_rho(r);
            assert!(heat.h(t, &z).abs() <= rho);
            assert!(heat.h_dt(t, &z).abs() <= rho);
            assert!(heat.h_grad(t, &z).iter().all(|g| g.abs() <= rho));
        }
    }
}
