use std::sync::Arc;

use super::family::{integral_tail, AuxiliaryFamily, BallProduct, CalibrationReport, TimeMap, YBound};
use super::skew_family::{decay_rate, required_profile, FamilyOptions};
use super::MatrosovError;
use crate::dynamics::norm;
use crate::excitation::ExcitationProbe;
use crate::plants::{channel_network_plant, ChannelBias, ChannelNetworkConfig, Modulation};

/// Longest base period among the channel modulations, used as the window unit.
fn channel_period(config: &ChannelNetworkConfig) -> f64 {
    let mut freqs: Vec<f64> = config
        .ga
        .iter()
        .filter_map(|g| match g.modulation {
            Modulation::Sine { freq, .. } if g.kappa != 0.0 => Some(freq.abs()),
            _ => None,
        })
        .collect();
    freqs.extend(config.gb.iter().filter_map(|b| match *b {
        ChannelBias::Sine { amplitude, freq, .. } if amplitude != 0.0 => Some(freq.abs()),
        _ => None,
    }));
    freqs
        .into_iter()
        .filter(|f| *f > 0.0)
        .fold(None, |acc: Option<f64>, f| Some(acc.map_or(f, |a| a.min(f))))
        .map_or(std::f64::consts::TAU, |f| std::f64::consts::TAU / f)
}

/// `Ωₖ(t, x) = ∏_{j≥k}(ωⱼ + g̃ⱼ,ᵦ)` with the blocks after `k` zeroed
/// (0-based `k`; `x` holds at least blocks `0…k`).
fn omega_product(config: &ChannelNetworkConfig, k: usize, kept: usize, t: f64, x: &[f64]) -> f64 {
    let xd = config.x_dim();
    let mut bar = vec![0.0; xd];
    bar[..kept].copy_from_slice(&x[..kept]);
    (k..config.n() - 1)
        .map(|j| config.ga[j].steady(t, &bar) + config.gb[j].value(t))
        .product()
}

/// The `3n−2` family of the channel network on `X = (x, ζ)`, with
/// `ζᵢ = zᵢ − g̃ᵢ,ₐ(t,x) + ωᵢ(t,x)` and `φₖ = |gₖ⋯g_{n−1}|·‖yₖ‖`.
pub fn aux_family_channels(
    config: ChannelNetworkConfig,
    big_delta: f64,
    opts: FamilyOptions,
) -> Result<AuxiliaryFamily, MatrosovError> {
    if !(big_delta > 0.0) {
        return Err(MatrosovError::Invalid(format!("Delta = {big_delta}")));
    }
    let plant = channel_network_plant(config.clone())?;
    let n = config.n();
    let xd = config.x_dim();
    let p = config.output_dim();
    let ranges = config.block_ranges();
    let cfg = Arc::new(config);

    // Maps between the plant state (x, z) and X = (x, ζ).
    let to_x = {
        let cfg = cfg.clone();
        Arc::new(move |t: f64, s: &[f64]| {
            let x = &s[..xd];
            let mut out = x.to_vec();
            for i in 0..n - 1 {
                out.push(s[xd + i] - cfg.ga[i].value(t, x) + cfg.ga[i].steady(t, x));
            }
            out
        })
    };
    let lift = {
        let cfg = cfg.clone();
        Arc::new(move |t: f64, big_x: &[f64]| {
            let x = &big_x[..xd];
            let mut out = x.to_vec();
            for i in 0..n - 1 {
                out.push(big_x[xd + i] + cfg.ga[i].value(t, x) - cfg.ga[i].steady(t, x));
            }
            out
        })
    };
    let phi = {
        let cfg = cfg.clone();
        Arc::new(move |t: f64, s: &[f64]| {
            let st = cfg.split(s);
            let y = cfg.outputs(&st);
            let g = cfg.gains(t, &st);
            (0..n - 1).map(|k| g.phi(k, norm(&y[k]))).collect::<Vec<f64>>()
        })
    };

    let mut v: Vec<TimeMap> = Vec::with_capacity(3 * n - 2);
    {
        let cfg = cfg.clone();
        v.push(Arc::new(move |_, s| {
            let st = cfg.split(s);
            cfg.blocks.iter().zip(&st.blocks).map(|(b, x)| (b.w)(x)).sum()
        }));
    }
    // Vᵢ = y_a·(g_{a−1}∏_{k=a}^{n−1}g_k²)·y_{a−1} with a = n−i+2 (1-based).
    for i in 2..=n {
        let cfg = cfg.clone();
        let a = n - i + 1; // 0-based index of y_a
        v.push(Arc::new(move |t, s| {
            let st = cfg.split(s);
            let y = cfg.outputs(&st);
            let g = cfg.gains(t, &st).g;
            let weight = g[a - 1] * g[a..n - 1].iter().map(|v| v * v).product::<f64>();
            weight * y[a].iter().zip(&y[a - 1]).map(|(u, w)| u * w).sum::<f64>()
        }));
    }
    for i in 0..n - 1 {
        let to_x = to_x.clone();
        v.push(Arc::new(move |t, s| to_x(t, s)[xd + i].powi(2)));
    }
    let window = opts.integral_window;
    for i in 1..n {
        let cfg = cfg.clone();
        let k = n - i - 1; // 0-based block of V_{2n−1+i}
        let kept = ranges[k].end;
        v.push(Arc::new(move |t, s| {
            let st = cfg.split(s);
            let yk = cfg.blocks[k].output(st.blocks[k]);
            let x = st.x.to_vec();
            yk.iter().map(|v| v * v).sum::<f64>()
                * integral_tail(|tau| omega_product(&cfg, k, kept, tau, &x).powi(2), t, window)
        }));
    }

    // Helpers on (X, ψ).
    let out_norm = {
        let cfg = cfg.clone();
        let r = ranges.clone();
        move |x: &[f64], k: usize| norm(&cfg.blocks[k].output(&x[r[k].clone()]))
    };
    let terminal = {
        let cfg = cfg.clone();
        let r = ranges[n - 1].clone();
        move |x: &[f64]| {
            let y = cfg.blocks[n - 1].output(&x[r.clone()]);
            norm(&y) + norm(&cfg.sigma.apply(&y))
        }
    };
    // Σ φ_ℓ^{1/(n−ℓ)} (1-based ℓ).
    let phi_roots = move |psi: &[f64]| {
        (0..n - 1)
            .map(|l| psi[l].abs().powf(1.0 / (n - 1 - l) as f64))
            .sum::<f64>()
    };

    let mut y = Vec::with_capacity(3 * n - 2);
    {
        let cfg = cfg.clone();
        let on = out_norm.clone();
        y.push(YBound::exact("Y1", move |x, _| -cfg.sigma.rho(on(x, n - 1), p)));
    }
    for i in 2..=n {
        let a = n - i + 1; // 0-based y_a, negative term in φ_{a−1}
        let c = cfg.blocks[a].c;
        let terminal = terminal.clone();
        let on = out_norm.clone();
        y.push(YBound::with_basis(
            format!("Y{i}"),
            move |_, psi| -c * psi[a - 1] * psi[a - 1],
            move |x, psi| match i {
                2 => terminal(x),
                3 => on(x, n - 1) + psi[n - 2].abs(),
                _ => psi[a].abs() + psi[a + 1].abs(),
            },
        ));
    }
    for i in 0..n - 1 {
        let terminal = terminal.clone();
        y.push(YBound::with_basis(
            format!("Y{}", n + 1 + i),
            move |x, _| -x[xd + i] * x[xd + i],
            move |x, psi| terminal(x) + phi_roots(psi),
        ));
    }

    let period = channel_period(&cfg);
    let mut profiles = Vec::new();
    for i in 1..n {
        let k = n - i - 1;
        let kept = ranges[k].end;
        let probe = {
            let cfg = cfg.clone();
            ExcitationProbe::new(
                move |t, x| vec![omega_product(&cfg, k, kept, t, x)],
                ranges[k].clone().collect(),
                (0.0, 5.0 * period),
            )
        };
        let plabel = format!("Omega_{} wrt x_{}", k + 1, k + 1);
        let profile = required_profile(&plabel, &probe, kept, big_delta, period, &opts)?;
        let rate = decay_rate(profile.clone(), opts.gamma_safety);
        profiles.push((plabel, profile));
        let terminal = terminal.clone();
        let on = out_norm.clone();
        let rk = ranges[k].clone();
        y.push(YBound::with_basis(
            format!("Y{}", 2 * n - 1 + i),
            move |x, _| -rate(norm(&x[rk.clone()])) * on(x, k).powi(2),
            move |x, psi| {
                let zetas: f64 = x[xd..].iter().map(|z| z.abs()).sum();
                terminal(x) + psi[k].abs().powf(2.0 / i as f64) + phi_roots(psi) + zetas
            },
        ));
    }

    let mut family = AuxiliaryFamily {
        label: format!("channels{n}"),
        plant,
        v,
        phi,
        y,
        to_x,
        lift,
        region: BallProduct {
            blocks: vec![(0..xd, big_delta), (xd..xd + n - 1, big_delta)],
        },
        psi_dim: n - 1,
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrosov::CalibrationOptions;
    use crate::plants::{ModulatedQuadratic, Sector};

    fn network(n: usize, bias: f64) -> ChannelNetworkConfig {
        ChannelNetworkConfig::identity(
            n,
            1,
            vec![
                ModulatedQuadratic {
                    kappa: 1.0,
                    modulation: Modulation::Sine { freq: 1.0, phase: 0.0 },
                };
                n - 1
            ],
            vec![ChannelBias::Constant { value: bias }; n - 1],
            Sector::Tanh,
        )
    }

    fn quick() -> FamilyOptions {
        FamilyOptions {
            calibration: CalibrationOptions {
                samples: 1000,
                ..CalibrationOptions::default()
            },
            ..FamilyOptions::default()
        }
    }

    #[test]
    fn two_blocks_give_four_functions() {
        let fam = aux_family_channels(network(2, 1.0), 1.0, quick()).unwrap();
        assert_eq!((fam.j(), fam.psi_dim, fam.x_dim()), (4, 1, 3));
        assert!(fam.calibration.uncovered.iter().all(|n| *n == 0), "{:?}", fam.calibration);
    }

    #[test]
    fn origin_zeroes_every_function() {
        let fam = aux_family_channels(network(3, 1.0), 1.0, quick()).unwrap();
        assert_eq!(fam.j(), 7);
        for t in [0.0, 0.8, 5.0] {
            let s = (fam.lift)(t, &[0.0; 5]);
            assert!(fam.v_values(t, &s).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn second_function_is_the_weighted_product() {
        // Constant gain g̃ = 2 with z = 0 and no quadratic part: V₂ = y₂·2·y₁.
        let cfg = ChannelNetworkConfig::identity(
            2,
            1,
            vec![ModulatedQuadratic::zero()],
            vec![ChannelBias::Constant { value: 2.0 }],
            Sector::Tanh,
        );
        let fam = aux_family_channels(cfg, 1.0, quick()).unwrap();
        assert_eq!(fam.v[1](0.0, &[1.0, 1.0, 0.0]), 2.0);
    }

    #[test]
    fn lift_inverts_the_zeta_map() {
        let fam = aux_family_channels(network(3, 1.0), 1.0, quick()).unwrap();
        let big_x = [0.3, -0.2, 0.5, 0.1, -0.4];
        let s = (fam.lift)(1.7, &big_x);
        let back = (fam.to_x)(1.7, &s);
        for (a, b) in big_x.iter().zip(back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zeta_obeys_its_filter_equation() {
        let cfg = network(3, 1.0);
        let fam = aux_family_channels(cfg.clone(), 1.0, quick()).unwrap();
        let s = [0.3, -0.2, 0.5, 0.1, -0.4];
        let t = 0.9;
        let f = fam.plant.eval(t, &s);
        let h = 1e-5;
        let fwd: Vec<f64> = s.iter().zip(&f).map(|(a, d)| a + h * d).collect();
        let bwd: Vec<f64> = s.iter().zip(&f).map(|(a, d)| a - h * d).collect();
        let zeta = (fam.to_x)(t, &s);
        let (zf, zb) = ((fam.to_x)(t + h, &fwd), (fam.to_x)(t - h, &bwd));
        for i in 0..2 {
            let fd = (zf[3 + i] - zb[3 + i]) / (2.0 * h);
            let gr: Vec<f64> = cfg.ga[i]
                .steady_grad(t, &s[..3])
                .iter()
                .zip(cfg.ga[i].grad(t, &s[..3]))
                .map(|(a, b)| a - b)
                .collect();
            let bracket: f64 = gr.iter().zip(&f[..3]).map(|(a, b)| a * b).sum();
            assert!((fd - (-zeta[3 + i] + bracket)).abs() < 1e-7, "{fd}");
        }
    }

    #[test]
    fn dead_channels_have_no_profile() {
        let cfg = ChannelNetworkConfig::identity(
            3,
            1,
            vec![ModulatedQuadratic::zero(); 2],
            vec![ChannelBias::Constant { value: 0.0 }; 2],
            Sector::Tanh,
        );
        assert!(matches!(
            aux_family_channels(cfg, 1.0, quick()),
            Err(MatrosovError::ProfileUnavailable { .. })
        ));
    }
}
