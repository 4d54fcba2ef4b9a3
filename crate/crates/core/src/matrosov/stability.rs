use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gains::GainCertificate;
use super::MatrosovError;
use crate::dynamics::{integrate, norm, sample_region, DynamicsError, RegionSpec, TimeVaryingSystem};

/// Simulation grid shared by the verifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationGrid {
    pub t0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    /// Initial conditions per radius (boundary points first).
    pub batch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub radius: f64,
    pub t0: f64,
    /// Largest sup-norm over the batch; infinite after a divergence.
    pub envelope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlingRow {
    pub radius: f64,
    pub sigma: f64,
    pub t0: f64,
    /// Time after `t0` from which every trajectory of the batch stays within `σ`.
    pub settling_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityWitness {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub reason: String,
    /// Norm of the last computed state.
    pub final_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StabilityReport {
    pub gamma_envelope: Vec<EnvelopeRow>,
    pub settling_times: Vec<SettlingRow>,
    pub uniform: bool,
    /// `(max − min)/max` of the tabulated quantity across `t₀`.
    pub spread: f64,
    pub witnesses: Vec<StabilityWitness>,
    pub pass: bool,
}

impl StabilityReport {
    /// Largest envelope at a radius over all `t₀`.
    pub fn envelope(&self, radius: f64) -> Option<f64> {
        self.gamma_envelope
            .iter()
            .filter(|r| r.radius == radius)
            .map(|r| r.envelope)
            .reduce(f64::max)
    }

    /// A single time valid for every `t₀`, if all of them settled.
    pub fn uniform_settling_time(&self) -> Option<f64> {
        self.settling_times
            .iter()
            .map(|r| r.settling_time)
            .try_fold(0.0f64, |acc, t| t.map(|t| acc.max(t)))
            .filter(|_| !self.settling_times.is_empty())
    }

    /// The quantitative chain: the empirical uniform time does not exceed
    /// the certificate's prediction.
    pub fn within_prediction(&self, cert: &GainCertificate) -> Option<bool> {
        self.uniform_settling_time().map(|t| t <= cert.t_predicted)
    }
}

fn initial_conditions(dim: usize, radius: f64, grid: &SimulationGrid) -> Result<Vec<Vec<f64>>, MatrosovError> {
    Ok(sample_region(&RegionSpec::ball(radius, dim)?, grid.batch, grid.seed)?)
}

fn validate(grid: &SimulationGrid) -> Result<(), MatrosovError> {
    if grid.t0.is_empty() || grid.batch == 0 || !(grid.horizon > 0.0) || !(grid.dt > 0.0) {
        return Err(MatrosovError::Invalid(format!(
            "simulation grid needs t0 values, a batch, and positive horizon/dt (got {grid:?})"
        )));
    }
    Ok(())
}

fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if max > 0.0 {
        (max - min) / max
    } else {
        0.0
    }
}

/// Uniform stability evidence: for each radius and `t₀` the largest sup-norm
/// over the batch; uniform when it varies by less than 5% across `t₀`.
pub fn verify_ugs(
    plant: &TimeVaryingSystem,
    radii: &[f64],
    grid: &SimulationGrid,
) -> Result<StabilityReport, MatrosovError> {
    validate(grid)?;
    let mut report = StabilityReport::default();
    let mut spread: f64 = 0.0;
    for &r in radii {
        let ics = initial_conditions(plant.dim(), r, grid)?;
        let tasks: Vec<(f64, &Vec<f64>)> = grid.t0.iter().flat_map(|&t0| ics.iter().map(move |x| (t0, x))).collect();
        let results: Vec<(f64, Result<f64, (DynamicsError, Vec<f64>)>)> = tasks
            .par_iter()
            .map(|&(t0, x0)| {
                let out = integrate(plant, t0, x0, t0 + grid.horizon, grid.dt)
                    .map(|tr| tr.sup_norm())
                    .map_err(|e| (e, x0.clone()));
                (t0, out)
            })
            .collect();
        let mut per_t0 = Vec::new();
        for &t0 in &grid.t0 {
            let mut env: f64 = 0.0;
            for (t, res) in results.iter().filter(|(t, _)| *t == t0) {
                match res {
                    Ok(s) => env = env.max(*s),
                    Err((e, x0)) => {
                        env = f64::INFINITY;
                        report.witnesses.push(StabilityWitness {
                            t0: *t,
                            x0: x0.clone(),
                            reason: e.to_string(),
                            final_norm: f64::INFINITY,
                        });
                    }
                }
            }
            per_t0.push(env);
            report.gamma_envelope.push(EnvelopeRow { radius: r, t0, envelope: env });
        }
        spread = spread.max(if per_t0.iter().all(|e| e.is_finite()) {
            relative_spread(&per_t0)
        } else {
            f64::INFINITY
        });
    }
    report.spread = spread;
    report.uniform = spread < 0.05;
    report.pass = report.witnesses.is_empty() && report.uniform;
    Ok(report)
}

/// Uniform attractivity evidence: for each `t₀`, the time after which every
/// trajectory from `‖x₀‖ ≤ r` stays within `σ`; uniform when the times vary
/// by less than 10% across `t₀`.
pub fn verify_uga(
    plant: &TimeVaryingSystem,
    radius: f64,
    sigma: f64,
    grid: &SimulationGrid,
) -> Result<StabilityReport, MatrosovError> {
    validate(grid)?;
    let ics = initial_conditions(plant.dim(), radius, grid)?;
    let tasks: Vec<(f64, &Vec<f64>)> = grid.t0.iter().flat_map(|&t0| ics.iter().map(move |x| (t0, x))).collect();
    // Per task: Ok(time after t0 from which the norm stays ≤ σ) or a witness.
    let results: Vec<(f64, Result<f64, StabilityWitness>)> = tasks
        .par_iter()
        .map(|&(t0, x0)| {
            let out = match integrate(plant, t0, x0, t0 + grid.horizon, grid.dt) {
                Err(e) => Err(StabilityWitness {
                    t0,
                    x0: x0.clone(),
                    reason: e.to_string(),
                    final_norm: f64::INFINITY,
                }),
                Ok(tr) => {
                    let last_out = tr.states.iter().rposition(|x| norm(x) > sigma);
                    match last_out {
                        None => Ok(0.0),
                        Some(k) if k + 1 == tr.len() => Err(StabilityWitness {
                            t0,
                            x0: x0.clone(),
                            reason: format!("still outside sigma = {sigma} at t = {}", tr.t_end),
                            final_norm: norm(tr.last()),
                        }),
                        Some(k) => Ok(tr.time(k + 1) - t0),
                    }
                }
            };
            (t0, out)
        })
        .collect();
    let mut report = StabilityReport::default();
    let mut times = Vec::new();
    for &t0 in &grid.t0 {
        let mut worst: Option<f64> = Some(0.0);
        for (_, res) in results.iter().filter(|(t, _)| *t == t0) {
            match res {
                Ok(t) => worst = worst.map(|w| w.max(*t)),
                Err(w) => {
                    worst = None;
                    report.witnesses.push(w.clone());
                }
            }
        }
        if let Some(t) = worst {
            times.push(t);
        }
        report.settling_times.push(SettlingRow {
            radius,
            sigma,
            t0,
            settling_time: worst,
        });
    }
    let all_settled = times.len() == grid.t0.len();
    report.spread = if all_settled { relative_spread(&times) } else { f64::INFINITY };
    report.uniform = all_settled && report.spread < 0.10;
    report.pass = report.uniform;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t0: Vec<f64>, horizon: f64) -> SimulationGrid {
        SimulationGrid {
            t0,
            horizon,
            dt: 0.01,
            batch: 12,
            seed: 3,
        }
    }

    #[test]
    fn contraction_envelope_equals_radius() {
        let plant = TimeVaryingSystem::new(2, "decay", |_, x| vec![-x[0], -x[1]]);
        let rep = verify_ugs(&plant, &[0.5, 1.0], &grid(vec![0.0, 3.0, 100.0], 5.0)).unwrap();
        assert!(rep.pass && rep.uniform);
        assert!((rep.envelope(0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!((rep.envelope(1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expansion_is_reported_as_divergence() {
        let plant = TimeVaryingSystem::new(1, "grow", |_, x| vec![x[0]]);
        let rep = verify_ugs(&plant, &[1.0], &grid(vec![0.0], 30.0)).unwrap();
        assert!(!rep.pass);
        assert!(!rep.witnesses.is_empty());
        assert!(rep.envelope(1.0).unwrap().is_infinite());
    }

    #[test]
    fn decay_settles_at_one_time_constant() {
        let plant = TimeVaryingSystem::new(1, "decay", |_, x| vec![-x[0]]);
        let sigma = (-1f64).exp();
        let rep = verify_uga(&plant, 1.0, sigma, &grid(vec![0.0, 2.5, 50.0], 5.0)).unwrap();
        assert!(rep.pass, "{rep:?}");
        let t = rep.uniform_settling_time().unwrap();
        assert!((t - 1.0).abs() <= 0.01 + 1e-9, "{t}");
    }

    #[test]
    fn sigma_above_radius_settles_immediately() {
        let plant = TimeVaryingSystem::new(1, "decay", |_, x| vec![-x[0]]);
        let rep = verify_uga(&plant, 1.0, 1.5, &grid(vec![0.0, 7.0], 2.0)).unwrap();
        assert_eq!(rep.uniform_settling_time(), Some(0.0));
        assert!(rep.pass);
    }

    #[test]
    fn stalled_state_is_a_witness() {
        let plant = TimeVaryingSystem::new(2, "half", |_, x| vec![-x[0], 0.0]);
        let rep = verify_uga(&plant, 1.0, 0.05, &grid(vec![0.0], 10.0)).unwrap();
        assert!(!rep.pass);
        assert!(rep.witnesses.iter().all(|w| w.final_norm > 0.05));
        assert_eq!(rep.settling_times[0].settling_time, None);
    }
}
