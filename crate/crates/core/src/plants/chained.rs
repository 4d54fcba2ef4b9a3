use serde::{Deserialize, Serialize};

use super::{HeatFunction, PlantError};
use crate::dynamics::TimeVaryingSystem;

/// Three-state chained form under the shaped controller
/// `u = -x₁ + h(t, x₂, x₃)`, `v = -x₃ - u·x₂`:
///
/// ```text
/// ẋ₁ = u,   ẋ₂ = u·x₃,   ẋ₃ = -x₃ - u·x₂
/// ```
///
/// The cross terms cancel in `½(x₂² + x₃²)`, whose derivative is `-x₃²`.
pub fn chained3_closed_loop(heat: HeatFunction) -> Result<TimeVaryingSystem, PlantError> {
    if heat.z_dim() != 2 {
        return Err(PlantError::Invalid(format!(
            "chained3 needs a heat function on z of dimension 2, got {}",
            heat.z_dim()
        )));
    }
    Ok(TimeVaryingSystem::new(3, "chained3", move |t, x| {
        let u = -x[0] + heat.h(t, &x[1..3]);
        vec![u, u * x[2], -x[2] - u * x[1]]
    }))
}

/// Gains of the `n`-state controller: `k₁` and `k'₂ … k'ₙ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainedGains {
    pub k1: f64,
    /// `k'₂ … k'ₙ` (length `n − 1`).
    pub kprime: Vec<f64>,
}

impl ChainedGains {
    pub fn unit(n: usize) -> Self {
        Self {
            k1: 1.0,
            kprime: vec![1.0; n.saturating_sub(1)],
        }
    }
}

/// `n`-state chained form
///
/// ```text
/// ẋ₁ = u,   ẋᵢ = u·x_{i+1} (2 ≤ i ≤ n−1),   ẋₙ = v
/// v  = −Σ_{i=2}^{n} k'ᵢ·uⁱ·xᵢ,   u = −k₁x₁ + h(t, x₂…xₙ)
/// ```
///
/// where the factor `u` in front of `xᵢ` is present exactly when `n − i` is
/// odd, so the occurrence of `u` alternates going down from `xₙ`.
pub fn chained_n_closed_loop(
    n: usize,
    gains: &ChainedGains,
    heat: HeatFunction,
) -> Result<TimeVaryingSystem, PlantError> {
    if n < 3 {
        return Err(PlantError::Invalid(format!("chained form needs n >= 3, got {n}")));
    }
    if gains.kprime.len() != n - 1 {
        return Err(PlantError::Invalid(format!(
            "expected {} gains k'_2..k'_n, got {}",
            n - 1,
            gains.kprime.len()
        )));
    }
    if !(gains.k1 > 0.0) || gains.kprime.iter().any(|k| !(*k > 0.0)) {
        return Err(PlantError::Invalid("all chained-form gains must be positive".into()));
    }
    if heat.z_dim() != n - 1 {
        return Err(PlantError::Invalid(format!(
            "heat function dimension {} does not match n - 1 = {}",
            heat.z_dim(),
            n - 1
        )));
    }
    let k1 = gains.k1;
    let kp = gains.kprime.clone();
    Ok(TimeVaryingSystem::new(n, format!("chained{n}"), move |t, x| {
        let u = -k1 * x[0] + heat.h(t, &x[1..]);
        let mut out = vec![0.0; n];
        out[0] = u;
        for i in 1..n - 1 {
            out[i] = u * x[i + 1];
        }
        let mut v = 0.0;
        for i in 2..=n {
            let factor = if (n - i) % 2 == 1 { u } else { 1.0 };
            v -= kp[i - 2] * factor * x[i - 1];
        }
        out[n - 1] = v;
        out
    }))
}
