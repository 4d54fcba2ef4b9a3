use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::MatrosovError;
use crate::excitation::{check_udpe, ExcitationProbe, SampleOptions, UdpeVerdict};
use crate::plants::{channel_network_plant, ChannelNetworkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NecessityOptions {
    pub horizon: f64,
    pub window: f64,
    pub mu: f64,
    /// Radius of the neighbourhood examined around each point (leading blocks only).
    pub delta: f64,
    pub samples: SampleOptions,
    /// Relative tolerance of the factor-out identity.
    pub factor_rtol: f64,
}

impl Default for NecessityOptions {
    fn default() -> Self {
        Self {
            horizon: 100.0,
            window: std::f64::consts::TAU,
            mu: 1e-3,
            delta: 0.0,
            samples: SampleOptions::default(),
            factor_rtol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NecessityPoint {
    /// Leading block states `(x₁ … x_level)`; the rest of `x` and all `ζ` are zero.
    pub head: Vec<f64>,
    /// Worst relative error of `F(t,s) = Π·C(t,s)` over the time grid.
    pub factor_error: f64,
    pub udpe: UdpeVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NecessityReport {
    pub level: usize,
    pub points: Vec<NecessityPoint>,
    pub factor_ok: bool,
    pub pe_ok: bool,
    pub pass: bool,
}

/// Vector field of the `(ζ, x)` system at `s = (ζ = 0, x = (head, 0))`.
fn field_at_s(config: &ChannelNetworkConfig, plant: &crate::dynamics::TimeVaryingSystem, t: f64, x: &[f64]) -> Vec<f64> {
    let n = config.n();
    let mut state = x.to_vec();
    for i in 0..n - 1 {
        // ζᵢ = 0 ⇔ zᵢ = g̃ᵢ,ₐ − ωᵢ
        state.push(config.ga[i].value(t, x) - config.ga[i].steady(t, x));
    }
    let f = plant.eval(t, &state);
    let fx = &f[..x.len()];
    let mut out: Vec<f64> = (0..n - 1)
        .map(|i| {
            let beta: Vec<f64> = config.ga[i]
                .steady_grad(t, x)
                .iter()
                .zip(config.ga[i].grad(t, x))
                .map(|(a, b)| a - b)
                .collect();
            beta.iter().zip(fx).map(|(a, b)| a * b).sum()
        })
        .collect();
    out.extend_from_slice(fx);
    out
}

/// `Π = ∏_{j≥level} g̃ⱼ` at `s` and the cofactor `C` with `F(t,s) = Π·C`,
/// assembled block by block from the interconnection (1-based `level`).
fn factored(config: &ChannelNetworkConfig, level: usize, t: f64, x: &[f64]) -> (f64, Vec<f64>) {
    let n = config.n();
    let ranges = config.block_ranges();
    let gt: Vec<f64> = (0..n - 1).map(|j| config.ga[j].steady(t, x) + config.gb[j].value(t)).collect();
    let pi: f64 = gt[level - 1..].iter().product();
    // P(m) = ∏_{j=m}^{level−1} g̃ⱼ for 1-based m ≤ level.
    let partial = |m: usize| gt[m - 1..level - 1].iter().product::<f64>();
    let h: Vec<Vec<f64>> = config
        .blocks
        .iter()
        .zip(&ranges)
        .map(|(b, r)| b.output(&x[r.clone()]))
        .collect();
    let p = config.output_dim();
    let mut cx = Vec::with_capacity(x.len());
    for k in 1..=n {
        let mut u = vec![0.0; p];
        if k <= level {
            if k > 1 {
                let c = partial(k - 1);
                u.iter_mut().zip(&h[k - 2]).for_each(|(a, b)| *a -= c * b);
            }
            if k < n {
                let c = partial(k);
                u.iter_mut().zip(&h[k]).for_each(|(a, b)| *a += c * b);
            }
        } else if k == level + 1 {
            u.iter_mut().zip(&h[level - 1]).for_each(|(a, b)| *a -= b);
        }
        let b = (config.blocks[k - 1].b)(&x[ranges[k - 1].clone()]);
        cx.extend_from_slice((b * DVector::from_vec(u)).as_slice());
    }
    let mut c: Vec<f64> = (0..n - 1)
        .map(|i| {
            config.ga[i]
                .steady_grad(t, x)
                .iter()
                .zip(config.ga[i].grad(t, x))
                .zip(&cx)
                .map(|((a, b), f)| (a - b) * f)
                .sum()
        })
        .collect();
    c.extend(cx);
    (pi, c)
}

/// Empirical necessity check on the set `s` of level `i`: every component of
/// the `(ζ, x)` vector field carries the factor `∏_{j≥i} g̃ⱼ`, and `‖F(t, s)‖`
/// must be excited with respect to `xᵢ`.
pub fn check_necessity_vector_field(
    config: &ChannelNetworkConfig,
    level: usize,
    heads: &[Vec<f64>],
    opts: NecessityOptions,
) -> Result<NecessityReport, MatrosovError> {
    let plant = channel_network_plant(config.clone())?;
    let n = config.n();
    if level == 0 || level >= n {
        return Err(MatrosovError::Invalid(format!("level {level} outside 1..{}", n - 1)));
    }
    let ranges = config.block_ranges();
    let head_dim = ranges[level - 1].end;
    let xd = config.x_dim();
    if heads.is_empty() || heads.iter().any(|h| h.len() != head_dim) {
        return Err(MatrosovError::Invalid(format!(
            "need points with the {head_dim} leading coordinates of blocks 1..{level}"
        )));
    }
    let pad = move |head: &[f64]| {
        let mut x = head.to_vec();
        x.resize(xd, 0.0);
        x
    };
    let cfg = Arc::new(config.clone());
    let plant = Arc::new(plant);
    let probe = {
        let (cfg, plant) = (cfg.clone(), plant.clone());
        ExcitationProbe::new(
            move |t, head| field_at_s(&cfg, &plant, t, &pad(head)),
            ranges[level - 1].clone().collect(),
            (0.0, opts.horizon),
        )
    };
    let mut points = Vec::with_capacity(heads.len());
    for head in heads {
        let x = pad(head);
        let steps = (opts.horizon / probe.t_step).round() as usize;
        let mut factor_error: f64 = 0.0;
        for k in 0..=steps {
            let t = k as f64 * probe.t_step;
            let f = field_at_s(config, &plant, t, &x);
            let (pi, c) = factored(config, level, t, &x);
            let scale = f.iter().chain(&c).map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let err = f.iter().zip(&c).map(|(a, b)| (a - pi * b).abs()).fold(0.0, f64::max);
            factor_error = factor_error.max(err / (scale * pi.abs().max(1.0)));
        }
        let udpe = check_udpe(&probe, head, opts.delta, opts.window, opts.mu, opts.samples)?;
        points.push(NecessityPoint {
            head: head.clone(),
            factor_error,
            udpe,
        });
    }
    let factor_ok = points.iter().all(|p| p.factor_error <= opts.factor_rtol);
    let pe_ok = points.iter().all(|p| p.udpe.pass);
    Ok(NecessityReport {
        level,
        points,
        factor_ok,
        pe_ok,
        pass: factor_ok && pe_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{ChannelBias, Modulation, ModulatedQuadratic, Sector};

    fn network(ga: ModulatedQuadratic, bias: f64) -> ChannelNetworkConfig {
        ChannelNetworkConfig::identity(3, 1, vec![ga; 2], vec![ChannelBias::Constant { value: bias }; 2], Sector::Tanh)
    }

    fn sine() -> ModulatedQuadratic {
        ModulatedQuadratic {
            kappa: 1.0,
            modulation: Modulation::Sine { freq: 1.0, phase: 0.0 },
        }
    }

    #[test]
    fn dead_channels_are_not_excited() {
        let cfg = network(ModulatedQuadratic::zero(), 0.0);
        for level in 1..=2 {
            let heads = vec![vec![0.5; level], vec![1.0; level]];
            let rep = check_necessity_vector_field(&cfg, level, &heads, NecessityOptions::default()).unwrap();
            assert!(rep.factor_ok);
            assert!(!rep.pe_ok && !rep.pass);
            assert_eq!(rep.points[0].udpe.min_mass, 0.0);
        }
    }

    #[test]
    fn unit_gains_factor_exactly() {
        let cfg = network(ModulatedQuadratic::zero(), 1.0);
        let rep = check_necessity_vector_field(&cfg, 1, &[vec![0.7]], NecessityOptions::default()).unwrap();
        assert_eq!(rep.points[0].factor_error, 0.0);
        // At level 1, ẋ₂ = −h₁(x₁) is the only nonzero component.
        assert!(rep.pass, "{rep:?}");
        assert!((rep.points[0].udpe.min_mass - 0.7 * std::f64::consts::TAU).abs() < 1e-2);
    }

    #[test]
    fn sine_gain_network_passes() {
        let cfg = network(sine(), 0.0);
        let opts = NecessityOptions {
            delta: 0.05,
            mu: 1e-4,
            ..NecessityOptions::default()
        };
        for level in 1..=2 {
            let heads = vec![vec![0.5; level], vec![-0.8; level]];
            let rep = check_necessity_vector_field(&cfg, level, &heads, opts).unwrap();
            assert!(rep.pass, "level {level}: {rep:?}");
        }
    }

    #[test]
    fn bad_level_or_shape_is_rejected() {
        let cfg = network(sine(), 1.0);
        assert!(check_necessity_vector_field(&cfg, 3, &[vec![1.0; 3]], NecessityOptions::default()).is_err());
        assert!(check_necessity_vector_field(&cfg, 1, &[vec![1.0, 2.0]], NecessityOptions::default()).is_err());
    }
}
