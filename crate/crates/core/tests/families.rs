use matrosov::matrosov::*;
use matrosov::plants::*;

fn sine(z_dim: usize) -> HeatFunction {
    make_heat(HeatKind::QuadraticSine { kappa: 1.0, freq: 1.0 }, z_dim).unwrap()
}

fn channels() -> ChannelNetworkConfig {
    let ga = ModulatedQuadratic {
        kappa: 1.0,
        modulation: Modulation::Sine { freq: 1.0, phase: 0.0 },
    };
    ChannelNetworkConfig::identity(3, 1, vec![ga; 2], vec![ChannelBias::Constant { value: 1.0 }; 2], Sector::Tanh)
}

#[test]
fn functions_stay_below_the_calibrated_bound() {
    let families = [
        aux_family_chained3(sine(2), 2.0, FamilyOptions::default()).unwrap(),
        aux_family_channels(channels(), 1.0, FamilyOptions::default()).unwrap(),
    ];
    for fam in &families {
        let check = fam.check_bounds(10_000, 3).unwrap();
        assert!(check.pass, "{}: {check:?}", fam.label);
        assert!(check.worst <= fam.mu);
    }
}

#[test]
fn skew_chain_needs_etas_below_the_decay_rates() {
    let fam = aux_family_skew(4, &[1.0, 1.0, 1.0], sine(4), 0.5, FamilyOptions::default()).unwrap();
    let samples = YSamples::draw(&fam, None, YSampleOptions::default()).unwrap();
    let fine = check_nonpositivity_chain(&samples, &[1e-6, 1e-7, 1e-8]);
    assert!(fine.pass, "{:?}", fine.verdicts);
    // Coarse η treats the small excitation-driven bounds as zero: the slack
    // stays flat, yet it is exactly nonpositive where earlier bounds vanish.
    let coarse = check_nonpositivity_chain(&samples, &[1e-1, 1e-2, 1e-3]);
    assert!(!coarse.pass);
    assert!(coarse.verdicts.iter().all(|v| v.exact_slack == 0.0));
}

#[test]
fn every_offset_bound_is_caught_on_the_channel_family() {
    let fam = aux_family_channels(channels(), 1.0, FamilyOptions::default()).unwrap();
    let opts = YSampleOptions {
        max_grid: 100_000,
        scattered: 2000,
        ..YSampleOptions::default()
    };
    for i in 0..fam.j() {
        let bad = fam.clone().with_y_offset(i, 1.0);
        let s = YSamples::draw(&bad, None, opts).unwrap();
        assert!(!check_nonpositivity_chain(&s, &[1e-1, 1e-2, 1e-3]).pass, "offset on Y{} slipped through", i + 1);
    }
}
