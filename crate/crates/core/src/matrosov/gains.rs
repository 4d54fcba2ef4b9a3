use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checks::{YSampleOptions, YSamples};
use super::family::AuxiliaryFamily;
use super::MatrosovError;

/// Default stand-in for `Yᵢ = 0` in the predicate sets: exact zeros, which
/// the ladder grid produces on its zero coordinates. A positive tolerance
/// would admit states where a bound is merely tiny (such as `γ(s)s² ~ s⁶`)
/// and break the `ε` claim.
pub const ZERO_TOL: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainOptions {
    pub samples: YSampleOptions,
    /// Seed of the independent re-verification sample.
    pub reverify_seed: u64,
    /// Relative margin of the predicted time over `2ʲη/ε`.
    pub t_margin: f64,
    /// Truncation window of integral auxiliary functions, folded into `η`.
    pub integral_window: f64,
    /// `|Yᵢ| ≤ zero_tol` stands for `Yᵢ = 0`.
    pub zero_tol: f64,
}

impl Default for GainOptions {
    fn default() -> Self {
        Self {
            samples: YSampleOptions::default(),
            reverify_seed: 0x5eed_0002,
            t_margin: 0.01,
            integral_window: 30.0,
            zero_tol: ZERO_TOL,
        }
    }
}

/// Outcome of evaluating `Z = ΣKᵢYᵢ + Y_j` on an independent sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reverification {
    pub samples: usize,
    pub seed: u64,
    pub worst_z: f64,
    pub bound: f64,
    pub pass: bool,
    pub witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCertificate {
    /// `K₁ … K_{j−1}`
    pub k: Vec<f64>,
    pub epsilon: f64,
    /// True when no sample satisfied the `ε` predicate and `ε = 1` was taken.
    pub epsilon_vacuous: bool,
    pub delta: f64,
    pub big_delta: f64,
    pub mu: f64,
    pub eta: f64,
    pub t_predicted: f64,
    pub samples: usize,
    pub reverification: Reverification,
}

impl GainCertificate {
    /// `Z(X, ψ)` from the bound values `Y₁…Y_j`.
    pub fn z(&self, y: &[f64]) -> f64 {
        self.k.iter().zip(y).map(|(k, v)| k * v).sum::<f64>() + y[y.len() - 1]
    }

    /// `−ε/2^{j−1}`
    pub fn bound(&self) -> f64 {
        -self.epsilon / 2f64.powi(self.k.len() as i32)
    }
}

fn argmax(samples: &YSamples, idx: &[usize], f: impl Fn(&[f64]) -> f64 + Sync) -> Option<(f64, usize)> {
    idx.par_iter()
        .map(|&n| (f(samples.y(n)), n))
        .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
}

/// Smallest power of two `≥ x` (and `≥ 1`).
fn power_of_two_at_least(x: f64) -> f64 {
    if x <= 1.0 {
        1.0
    } else {
        2f64.powi(x.log2().ceil() as i32)
    }
}

/// Backward construction of `K₁…K_{j−1}` and `ε` on samples of
/// `H(δ, Δ) × B(μ)`:
///
/// * `ε = −max Y_j` over samples with `Yᵢ ≈ 0` for all `i < j`;
/// * for `ℓ = j…2`, with `Ỹ` the partial sum and `ε̃` its margin, samples with
///   `Yᵢ ≈ 0` for `i ≤ ℓ−2` and `Y_{ℓ−1} ≈ 0` must have `Ỹ ≤ −ε̃/2`; the others
///   fix `K_{ℓ−1}` as the power of two at least twice
///   `max (Ỹ + ε̃/2)/(−Y_{ℓ−1})`; then `Ỹ ← K_{ℓ−1}Y_{ℓ−1} + Ỹ`, `ε̃ ← ε̃/2`.
///
/// The final `Z ≤ −ε/2^{j−1}` is re-verified on an independent sample.
pub fn find_matrosov_gains(
    family: &AuxiliaryFamily,
    delta: f64,
    opts: GainOptions,
) -> Result<GainCertificate, MatrosovError> {
    if !(delta > 0.0) || delta >= family.big_delta {
        return Err(MatrosovError::Invalid(format!(
            "need 0 < delta < Delta, got delta = {delta}, Delta = {}",
            family.big_delta
        )));
    }
    let samples = YSamples::draw(family, Some(delta), opts.samples)?;
    let j = family.j();
    let all: Vec<usize> = (0..samples.len()).collect();
    let tol = opts.zero_tol;
    let zero_before = |n: usize, upto: usize| samples.y(n)[..upto].iter().all(|v| v.abs() <= tol);

    // ε from the set where every earlier bound vanishes.
    let pred: Vec<usize> = all.iter().copied().filter(|&n| zero_before(n, j - 1)).collect();
    let (epsilon, epsilon_vacuous) = match argmax(&samples, &pred, |y| y[j - 1]) {
        None => (1.0, true),
        Some((m, n)) if m >= 0.0 => {
            return Err(MatrosovError::NoEpsilon {
                value: m,
                witness: samples.point(n).to_vec(),
            })
        }
        Some((m, _)) => (-m, false),
    };

    // Partial sums Ỹ per sample, built from Y_j backwards.
    let mut ytilde: Vec<f64> = all.par_iter().map(|&n| samples.y(n)[j - 1]).collect();
    let mut eps_t = epsilon;
    let mut k = vec![0.0; j - 1];
    for l in (2..=j).rev() {
        let a: Vec<usize> = all.iter().copied().filter(|&n| zero_before(n, l - 2)).collect();
        let (on, off): (Vec<usize>, Vec<usize>) = a.iter().partition(|&&n| samples.y(n)[l - 2] >= -tol);
        let target = -eps_t / 2.0;
        if let Some((m, n)) = on
            .par_iter()
            .map(|&n| (ytilde[n], n))
            .reduce_with(|a, b| if b.0 > a.0 { b } else { a })
        {
            if m > target {
                return Err(MatrosovError::NoGain {
                    level: l - 1,
                    value: m,
                    witness: samples.point(n).to_vec(),
                });
            }
        }
        let need = off
            .par_iter()
            .map(|&n| (ytilde[n] - target) / -samples.y(n)[l - 2])
            .reduce(|| 0.0, f64::max);
        let kl = power_of_two_at_least(2.0 * need);
        k[l - 2] = kl;
        ytilde.par_iter_mut().enumerate().for_each(|(n, yt)| *yt += kl * samples.y(n)[l - 2]);
        eps_t /= 2.0;
    }

    let ksum: f64 = k.iter().sum();
    let truncation = (-opts.integral_window).exp() * family.mu;
    let eta = (family.mu + truncation) * (1.0 + ksum);
    let t_predicted = 2f64.powi(j as i32) * eta / epsilon * (1.0 + opts.t_margin);

    let mut cert = GainCertificate {
        k,
        epsilon,
        epsilon_vacuous,
        delta,
        big_delta: family.big_delta,
        mu: family.mu,
        eta,
        t_predicted,
        samples: samples.len(),
        reverification: Reverification {
            samples: 0,
            seed: opts.reverify_seed,
            worst_z: f64::NEG_INFINITY,
            bound: 0.0,
            pass: false,
            witness: None,
        },
    };
    cert.reverification = reverify(family, &cert, opts)?;
    if !cert.reverification.pass {
        return Err(MatrosovError::CertificateViolated {
            value: cert.reverification.worst_z,
            witness: cert.reverification.witness.clone().unwrap_or_default(),
        });
    }
    Ok(cert)
}

/// Evaluate `Z` on a jittered grid and scattered points drawn with a fresh seed.
pub fn reverify(
    family: &AuxiliaryFamily,
    cert: &GainCertificate,
    opts: GainOptions,
) -> Result<Reverification, MatrosovError> {
    let fresh = YSampleOptions {
        seed: opts.reverify_seed,
        jitter: true,
        ..opts.samples
    };
    let samples = YSamples::draw(family, Some(cert.delta), fresh)?;
    let idx: Vec<usize> = (0..samples.len()).collect();
    let bound = cert.bound();
    let worst = argmax(&samples, &idx, |y| cert.z(y));
    let (worst_z, witness) = match worst {
        Some((z, n)) => (z, Some(samples.point(n).to_vec())),
        None => (f64::NEG_INFINITY, None),
    };
    Ok(Reverification {
        samples: samples.len(),
        seed: opts.reverify_seed,
        worst_z,
        bound,
        pass: !samples.is_empty() && worst_z <= bound,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TimeVaryingSystem;
    use crate::matrosov::family::{BallProduct, CalibrationReport, YBound};
    use std::sync::Arc;

    fn toy(y: Vec<YBound>) -> AuxiliaryFamily {
        let id = Arc::new(|_: f64, s: &[f64]| s.to_vec());
        let j = y.len();
        AuxiliaryFamily {
            label: "toy".into(),
            plant: TimeVaryingSystem::new(2, "decay", |_, x| vec![-x[0], -x[1]]),
            v: (0..j).map(|_| Arc::new(|_: f64, _: &[f64]| 0.0) as _).collect(),
            phi: Arc::new(|_, _| vec![0.0]),
            y,
            to_x: id.clone(),
            lift: id,
            region: BallProduct::single(2, 1.0),
            psi_dim: 1,
            big_delta: 1.0,
            mu: 1.0,
            calibration: CalibrationReport::default(),
            profiles: vec![],
        }
    }

    fn two_level() -> AuxiliaryFamily {
        toy(vec![
            YBound::exact("Y1", |z, _| -z[1] * z[1]),
            YBound::exact("Y2", |z, _| -z[0] * z[0] + 10.0 * z[1].abs()),
        ])
    }

    /// Brute force over K ∈ {1, 2, 4, …}: the smallest K with
    /// K·Y₁ + Y₂ ≤ −ε/2 on a dense polar grid of the annulus, ε = 0.01.
    fn oracle_smallest_ladder_gain() -> f64 {
        let mut pts = Vec::new();
        for a in 0..720 {
            let th = a as f64 / 720.0 * std::f64::consts::TAU;
            for r in 0..60 {
                let rho = 0.1 + 0.9 * r as f64 / 59.0;
                pts.push((rho * th.cos(), rho * th.sin()));
            }
        }
        for e in 0..30 {
            let k = 2f64.powi(e);
            if pts.iter().all(|(z1, z2)| -k * z2 * z2 - z1 * z1 + 10.0 * z2.abs() <= -0.005) {
                return k;
            }
        }
        f64::INFINITY
    }

    #[test]
    fn toy_two_level_certificate_against_oracle() {
        let fam = two_level();
        let cert = find_matrosov_gains(&fam, 0.1, GainOptions::default()).unwrap();
        assert!((cert.epsilon - 0.01).abs() < 1e-12, "{}", cert.epsilon);
        let oracle = oracle_smallest_ladder_gain();
        assert_eq!(oracle, 8192.0);
        assert!(cert.k[0] >= oracle && cert.k[0] <= 4.0 * oracle, "{:?}", cert.k);
        assert!(cert.reverification.pass);
        // Independent dense check of the certified inequality.
        for a in 0..2000 {
            let th = a as f64 / 2000.0 * std::f64::consts::TAU;
            for r in 0..50 {
                let rho = 0.1 + 0.9 * r as f64 / 49.0;
                let (z1, z2) = (rho * th.cos(), rho * th.sin());
                let z = cert.k[0] * -(z2 * z2) - z1 * z1 + 10.0 * z2.abs();
                assert!(z <= -cert.epsilon / 2.0);
            }
        }
        let eta = 1.0 * (1.0 + cert.k[0]) * (1.0 + (-30f64).exp());
        assert!((cert.eta - eta).abs() < 1e-9 * eta);
        assert!(cert.t_predicted > 4.0 * cert.eta / cert.epsilon);
    }

    #[test]
    fn single_function_base_case() {
        let fam = toy(vec![YBound::exact("Y1", |z, _| -(z[0] * z[0] + z[1] * z[1]))]);
        let cert = find_matrosov_gains(&fam, 0.1, GainOptions::default()).unwrap();
        assert!(cert.k.is_empty());
        assert!((cert.epsilon - 0.01).abs() < 1e-12);
    }

    #[test]
    fn nonnegative_last_bound_aborts_with_witness() {
        let fam = toy(vec![
            YBound::exact("Y1", |z, _| -z[1] * z[1]),
            YBound::exact("Y2", |z, _| z[1].abs()),
        ]);
        match find_matrosov_gains(&fam, 0.1, GainOptions::default()) {
            Err(MatrosovError::NoEpsilon { value, witness }) => {
                assert!(value >= 0.0);
                assert!(witness[1].abs() <= 1e-6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn power_of_two_ladder() {
        assert_eq!(power_of_two_at_least(0.3), 1.0);
        assert_eq!(power_of_two_at_least(10000.0), 16384.0);
        assert_eq!(power_of_two_at_least(8192.0), 8192.0);
    }
}
