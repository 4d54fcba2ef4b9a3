use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::family::{integral_tail, AuxiliaryFamily, BallProduct, CalibrationOptions, CalibrationReport, TimeMap, YBound};
use super::MatrosovError;
use crate::dynamics::norm;
use crate::excitation::{
    estimate_pe_profile, estimate_pe_profile_at, ExcitationProbe, GainMode, PeProfile, ProfileOptions, SampleOptions, SteadyStateGain,
};
use crate::plants::{chained3_closed_loop, skew_symmetric_plant, skew_weights, HeatFunction, HeatKind};

/// Knobs shared by the family builders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyOptions {
    /// Radii `Δ·2^{−k}` tabulated by the excitation profiles.
    pub radii_count: usize,
    pub profile_samples: usize,
    /// Factor `< 1` applied to the profile-derived mass bounds.
    pub gamma_safety: f64,
    /// Truncation of the integral auxiliary functions.
    pub integral_window: f64,
    /// Length, in heat periods, of the horizon screened for lasting excitation.
    pub screen_periods: f64,
    pub calibration: CalibrationOptions,
    pub seed: u64,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        Self {
            radii_count: 12,
            profile_samples: 8,
            gamma_safety: 0.95,
            integral_window: 30.0,
            screen_periods: 40.0,
            calibration: CalibrationOptions::default(),
            seed: 1,
        }
    }
}

/// Base period of the heat modulation, used as the window ladder unit.
pub(crate) fn heat_period(heat: &HeatFunction) -> f64 {
    match heat.kind {
        HeatKind::QuadraticSine { freq, .. } => std::f64::consts::TAU / freq,
        _ => std::f64::consts::TAU,
    }
}

pub(crate) fn steady_gain(heat: HeatFunction) -> Result<SteadyStateGain, MatrosovError> {
    let mode = if heat.steady_closed_form(0.0, &[]).is_some() {
        GainMode::ClosedForm
    } else {
        GainMode::Quadrature
    };
    Ok(SteadyStateGain::from_heat(heat, mode)?)
}

/// Profile of a probe, failing when even the largest radius is not excited.
pub(crate) fn required_profile(
    label: &str,
    probe: &ExcitationProbe,
    dim: usize,
    big_delta: f64,
    period: f64,
    opts: &FamilyOptions,
) -> Result<PeProfile, MatrosovError> {
    let popts = ProfileOptions {
        t_base: period,
        t_count: 4,
        samples: SampleOptions {
            z_samples: opts.profile_samples,
            seed: opts.seed,
        },
        ..ProfileOptions::default()
    };
    // Screen the largest radius over a long horizon first: a fading signal
    // shows up as windows far weaker than the early ones.
    let long = probe.clone().with_horizon(0.0, opts.screen_periods * period);
    let screen = estimate_pe_profile_at(&long, dim, big_delta, &[big_delta], popts)?;
    if screen.not_pe[0] {
        return Err(MatrosovError::ProfileUnavailable {
            label: label.to_string(),
            reason: format!(
                "at radius {big_delta} no window up to {} keeps a fixed share of its mass over [0, {}]",
                4.0 * period,
                opts.screen_periods * period
            ),
        });
    }
    Ok(estimate_pe_profile(probe, dim, big_delta, opts.radii_count, popts)?)
}

/// `s ↦ safety·min{s, e^{−θ(s)}θ(s)⁻¹γ(s)²}` from an excitation table.
///
/// Below the smallest tabulated radius `r₀` the rate continues as
/// `rate(r₀)·(s/r₀)^{q+1}`, where `q` is the growth exponent between the two
/// smallest radii, so it stays positive off the origin and decays faster
/// than the tabulated trend.
pub(crate) fn decay_rate(profile: PeProfile, safety: f64) -> impl Fn(f64) -> f64 + Send + Sync + Clone {
    let (r0, r1) = (profile_radius(&profile, 0), profile_radius(&profile, 1));
    let tabulated = move |s: f64| {
        let g = profile.gamma_at(s);
        if g <= 0.0 {
            return 0.0;
        }
        let th = profile.theta_at(s);
        safety * s.min((-th).exp() / th * g * g)
    };
    let (a0, a1) = (tabulated(r0), tabulated(r1));
    let exponent = if a0 > 0.0 && a1 > a0 { (a1 / a0).ln() / (r1 / r0).ln() + 1.0 } else { f64::INFINITY };
    move |s| {
        if s >= r0 || a0 <= 0.0 {
            tabulated(s)
        } else if exponent.is_finite() {
            a0 * (s / r0).powf(exponent)
        } else {
            0.0
        }
    }
}

fn profile_radius(profile: &PeProfile, k: usize) -> f64 {
    profile.radii.get(k).or(profile.radii.last()).copied().unwrap_or(0.0)
}

/// Family for `ẏ = u, ż = A(u)z` with `V₁ = scale·zᵀPz`. State is `(y, z₁…zₘ)`.
fn skew_form_family(
    label: &str,
    m: usize,
    k: &[f64],
    heat: HeatFunction,
    v1_scale: f64,
    big_delta: f64,
    opts: FamilyOptions,
) -> Result<AuxiliaryFamily, MatrosovError> {
    if !(big_delta > 0.0) {
        return Err(MatrosovError::Invalid(format!("Delta = {big_delta}")));
    }
    let plant = if m == 2 && v1_scale == 0.5 && k == [1.0] {
        chained3_closed_loop(heat)?
    } else {
        skew_symmetric_plant(m, k, heat)?
    };
    let p = skew_weights(k);
    let kk = k.to_vec();
    let gain = steady_gain(heat)?;
    let window = opts.integral_window;
    // k_q for q = 2…m
    let kq = move |q: usize| kk[q - 2];
    let u_of = move |t: f64, s: &[f64]| -s[0] + heat.h(t, &s[1..]);
    // zᵢ with 1-based index
    let z = |s: &[f64], i: usize| s[i];

    let mut v: Vec<TimeMap> = Vec::with_capacity(2 * m + 1);
    {
        let p = p.clone();
        v.push(Arc::new(move |_, s| v1_scale * (1..=m).map(|i| p[i - 1] * s[i] * s[i]).sum::<f64>()));
    }
    for i in 2..=m {
        let pw = (2 * i - 3) as i32;
        v.push(Arc::new(move |t, s| z(s, m - i + 2) * u_of(t, s).powi(pw) * z(s, m - i + 1)));
    }
    let zeta = {
        let gain = gain.clone();
        Arc::new(move |t: f64, s: &[f64]| {
            let xi = &s[1..m];
            s[0] - heat.h_restricted(t, xi) + gain.value(t, xi)
        })
    };
    {
        let zeta = zeta.clone();
        v.push(Arc::new(move |t, s| zeta(t, s).powi(2)));
    }
    for i in 2..=m {
        let gain = gain.clone();
        let pw = 2 * (i as i32 - 1);
        v.push(Arc::new(move |t, s| {
            let xi = s[1..m].to_vec();
            let zi = z(s, m - i + 1);
            zi * zi * integral_tail(|tau| gain.value(tau, &xi).powi(pw), t, window)
        }));
    }
    v.push(Arc::new(|_, s| s[0] * s[0]));

    let phi = {
        let zeta = zeta.clone();
        Arc::new(move |t: f64, s: &[f64]| {
            let u = u_of(t, s);
            let mut out = Vec::with_capacity(m);
            out.push(zeta(t, s));
            for i in 2..=m {
                out.push(u.powi(i as i32 - 1) * z(s, m - i + 1));
            }
            out
        })
    };

    // Building blocks of the bounds, on X = state and ψ.
    // c₀ = 0, c₁ = zₘ, c_l = ψ_l.
    let c = move |x: &[f64], psi: &[f64], l: usize| match l {
        0 => 0.0,
        1 => x[m],
        _ => psi[l - 1],
    };
    // Terms controlling ξ̇: |zₘ| and, when m ≥ 3, |ψ_l|^{1/(l−1)}.
    let xi_rate = move |x: &[f64], psi: &[f64]| {
        let mut b = x[m].abs();
        if m >= 3 {
            for l in 2..=m {
                b += psi[l - 1].abs().powf(1.0 / (l as f64 - 1.0));
            }
        }
        b
    };

    let mut y = Vec::with_capacity(2 * m + 1);
    let (pm, km) = (p[m - 1], k[m - 2]);
    y.push(YBound::exact("Y1", move |x, _| -2.0 * v1_scale * pm * km * x[m] * x[m]));
    for i in 2..=m {
        let ki = kq(m - i + 2);
        y.push(YBound::with_basis(
            format!("Y{i}"),
            move |_, psi| -ki * psi[i - 1] * psi[i - 1],
            move |x, psi| c(x, psi, i - 1).abs() + c(x, psi, i - 2).abs(),
        ));
    }
    y.push(YBound::with_basis(
        format!("Y{}", m + 1),
        |_, psi| -psi[0] * psi[0],
        xi_rate,
    ));

    let period = heat_period(&heat);
    let mut profiles = Vec::new();
    for i in 2..=m {
        let gain = gain.clone();
        let pw = i as i32 - 1;
        let probe = ExcitationProbe::new(
            move |t, xi| vec![gain.value(t, xi).powi(pw)],
            (0..m - 1).collect(),
            (0.0, 5.0 * period),
        );
        let plabel = format!("omega^{pw} wrt xi");
        let profile = required_profile(&plabel, &probe, m - 1, big_delta, period, &opts)?;
        let rate = decay_rate(profile.clone(), opts.gamma_safety);
        profiles.push((plabel, profile));
        let zi = m - i + 1;
        y.push(YBound::with_basis(
            format!("Y{}", m + i),
            move |x, _| -rate(norm(&x[1..m])) * x[zi] * x[zi],
            move |x, psi| {
                let lead = if i == 2 { psi[0] * psi[0] } else { psi[0].abs() };
                lead + psi[i - 1] * psi[i - 1] + xi_rate(x, psi)
            },
        ));
    }
    y.push(YBound::with_basis(
        format!("Y{}", 2 * m + 1),
        |x, _| -x[0] * x[0],
        move |x, _| norm(&x[1..=m]),
    ));

    let identity = Arc::new(|_: f64, s: &[f64]| s.to_vec());
    let mut family = AuxiliaryFamily {
        label: label.to_string(),
        plant,
        v,
        phi,
        y,
        to_x: identity.clone(),
        lift: identity,
        region: BallProduct::single(m + 1, big_delta),
        psi_dim: m,
        big_delta,
        mu: 0.0,
        calibration: CalibrationReport::default(),
        profiles,
    };
    let mut copts = opts.calibration;
    copts.t_span = 2.0 * period;
    family.calibrate(copts)?;
    Ok(family)
}

/// The five-function family of the three-state chained form (`j = 5`, `m = 2`).
pub fn aux_family_chained3(
    heat: HeatFunction,
    big_delta: f64,
    opts: FamilyOptions,
) -> Result<AuxiliaryFamily, MatrosovError> {
    skew_form_family("chained3", 2, &[1.0], heat, 0.5, big_delta, opts)
}

/// The `2m+1` family of the skew-symmetric plant with gains `k₂…kₘ`.
pub fn aux_family_skew(
    m: usize,
    k: &[f64],
    heat: HeatFunction,
    big_delta: f64,
    opts: FamilyOptions,
) -> Result<AuxiliaryFamily, MatrosovError> {
    if m < 2 || k.len() + 1 != m {
        return Err(MatrosovError::Invalid(format!("skew family needs m >= 2 and m-1 gains, got m = {m}, {} gains", k.len())));
    }
    skew_form_family(&format!("skew{m}"), m, k, heat, 1.0, big_delta, opts)
}
