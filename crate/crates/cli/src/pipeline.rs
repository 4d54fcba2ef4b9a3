//! Runs the selected stages of a scenario in order and writes the artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use matrosov::dynamics::{integrate, sample_region, RegionSpec as Ball, Trajectory};
use matrosov::excitation::{check_udpe, estimate_pe_profile, ExcitationProbe, PeProfile, ProfileOptions, SampleOptions};
use matrosov::matrosov::{
    aux_family_chained3, aux_family_channels, aux_family_skew, check_derivative_bounds, check_necessity_vector_field,
    check_nonpositivity_chain, check_zero_locus, find_matrosov_gains, verify_uga, verify_ugs, AuxiliaryFamily,
    FamilyOptions, GainCertificate, GainOptions, MatrosovError, NecessityOptions, SimulationGrid, YSampleOptions,
    YSamples,
};

use crate::scenario::{PeStage, PlantSpec, Scenario};

pub const TRAJECTORIES_CSV: &str = "trajectories.csv";
pub const PE_PROFILE_CSV: &str = "pe_profile.csv";
pub const VIOLATIONS_CSV: &str = "violations.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SCENARIO_JSON: &str = "scenario.json";

/// Stage names in execution order.
pub const STAGES: [&str; 7] = ["simulate", "pe_check", "family", "assumptions", "gains", "ugs", "uga"];

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Pass,
    Fail,
    /// A stage it depends on did not produce its output.
    Skipped,
    /// The stage could not run; later stages are not attempted.
    Error(String),
    /// Not attempted after an earlier error.
    NotRun,
}

impl Outcome {
    fn verdict(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Skipped => "skipped",
            Outcome::Error(_) => "error",
            Outcome::NotRun => "not_run",
        }
    }
}

/// One row of `violations.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationRow {
    pub stage: String,
    pub index: usize,
    /// Empty when the violation is not tied to a time.
    pub t: Option<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub exit_code: i32,
    pub verdicts: BTreeMap<String, String>,
    pub details: BTreeMap<String, Value>,
}

#[derive(Default)]
struct Run {
    verdicts: BTreeMap<String, Outcome>,
    details: BTreeMap<String, Value>,
    violations: Vec<ViolationRow>,
    trajectory: Option<Trajectory>,
    profile: Option<PeProfile>,
    family: Option<AuxiliaryFamily>,
    certificate: Option<GainCertificate>,
}

impl Run {
    fn record(&mut self, stage: &str, outcome: Outcome, detail: Value) {
        let detail = match &outcome {
            Outcome::Error(msg) => json!({ "error": msg }),
            _ => detail,
        };
        self.details.insert(stage.to_string(), detail);
        self.verdicts.insert(stage.to_string(), outcome);
    }

    fn violation(&mut self, stage: &str, index: usize, t: Option<f64>, margin: f64) {
        self.violations.push(ViolationRow {
            stage: stage.to_string(),
            index,
            t,
            margin,
        });
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn selected(scenario: &Scenario) -> Vec<&'static str> {
    let s = &scenario.stages;
    let on = [
        s.simulate.is_some(),
        s.pe_check.is_some(),
        s.family.is_some(),
        s.assumptions.is_some(),
        s.gains.is_some(),
        s.ugs.is_some(),
        s.uga.is_some(),
    ];
    STAGES.iter().zip(on).filter(|(_, on)| *on).map(|(s, _)| *s).collect()
}

fn grid(scenario: &Scenario, horizon: Option<f64>) -> SimulationGrid {
    SimulationGrid {
        t0: scenario.grid.t0.clone(),
        horizon: horizon.unwrap_or(scenario.grid.horizon),
        dt: scenario.grid.dt,
        batch: scenario.grid.batch,
        seed: scenario.seed,
    }
}

fn simulate(scenario: &Scenario, run: &mut Run) -> Outcome {
    let stage = scenario.stages.simulate.as_ref().unwrap();
    let plant = scenario.plant.build().expect("validated plant");
    let dim = plant.dim();
    let x0 = stage
        .x0
        .clone()
        .unwrap_or_else(|| vec![stage.radius / (dim as f64).sqrt(); dim]);
    let t0 = scenario.grid.t0[0];
    let horizon = stage.horizon.unwrap_or(scenario.grid.horizon);
    match integrate(&plant, t0, &x0, t0 + horizon, scenario.grid.dt) {
        Ok(tr) => {
            run.details.insert(
                "simulate".into(),
                json!({ "x0": x0, "t0": t0, "steps": tr.len() - 1, "sup_norm": tr.sup_norm(), "final": tr.last() }),
            );
            run.trajectory = Some(tr);
            Outcome::Pass
        }
        Err(e) => Outcome::Error(e.to_string()),
    }
}

/// Excitation probe of the plant: `ψ(t, ξ)` for heat plants, the channel
/// gains `ω_j + g̃_j,b` for channel networks.
fn probe(plant: &PlantSpec, horizon: f64) -> ExcitationProbe {
    let dim = plant.pe_dim().expect("validated probe");
    if let Some(cfg) = plant.channel_config() {
        return ExcitationProbe::new(
            move |t, x| {
                cfg.ga
                    .iter()
                    .zip(&cfg.gb)
                    .map(|(a, b)| a.steady(t, x) + b.value(t))
                    .collect()
            },
            (0..dim).collect(),
            (0.0, horizon),
        );
    }
    let heat = plant.heat().expect("validated heat").expect("heat plant");
    ExcitationProbe::new(move |t, xi| vec![heat.psi(t, xi)], (0..dim).collect(), (0.0, horizon))
}

fn pe_check(scenario: &Scenario, run: &mut Run) -> Outcome {
    let stage: &PeStage = scenario.stages.pe_check.as_ref().unwrap();
    let probe = probe(&scenario.plant, stage.horizon);
    let samples = SampleOptions {
        seed: scenario.seed,
        ..SampleOptions::default()
    };
    let udpe = match check_udpe(&probe, &stage.point, stage.delta, stage.window, stage.mu, samples) {
        Ok(v) => v,
        Err(e) => return Outcome::Error(e.to_string()),
    };
    if let Some(w) = &udpe.witness {
        if !udpe.pass {
            run.violation("pe_check", 0, Some(w.t), w.mass - stage.mu);
        }
    }
    let popts = ProfileOptions {
        t_base: stage.window,
        samples: SampleOptions {
            z_samples: 8,
            seed: scenario.seed,
        },
        ..ProfileOptions::default()
    };
    let dim = stage.point.len();
    let profile = estimate_pe_profile(&probe, dim, scenario.region.big_delta, stage.radii_count, popts);
    let profile_ok = profile.as_ref().is_ok_and(|p| p.is_pe_everywhere());
    let mut detail = json!({ "udpe": to_value(&udpe), "profile_pe_everywhere": profile_ok });
    if let Err(e) = &profile {
        detail["profile_error"] = json!(e.to_string());
    }
    run.profile = profile.ok();
    let mut pass = udpe.pass && profile_ok;
    if let Some(cfg) = scenario.plant.channel_config() {
        let ranges = cfg.block_ranges();
        let mut levels = Vec::new();
        for level in 1..cfg.n() {
            let head = stage.point[..ranges[level - 1].end].to_vec();
            let opts = NecessityOptions {
                horizon: stage.horizon,
                window: stage.window,
                mu: stage.mu,
                delta: stage.delta,
                ..NecessityOptions::default()
            };
            match check_necessity_vector_field(&cfg, level, &[head], opts) {
                Ok(rep) => {
                    pass &= rep.pass;
                    levels.push(json!({ "level": level, "factor_ok": rep.factor_ok, "pe_ok": rep.pe_ok, "pass": rep.pass }));
                }
                Err(e) => return Outcome::Error(e.to_string()),
            }
        }
        detail["necessity"] = Value::Array(levels);
    }
    run.details.insert("pe_check".into(), detail);
    Outcome::verdict(pass)
}

fn build_family(scenario: &Scenario) -> Result<AuxiliaryFamily, MatrosovError> {
    let opts = FamilyOptions {
        seed: scenario.seed,
        ..FamilyOptions::default()
    };
    let big_delta = scenario.region.big_delta;
    let heat = || scenario.plant.heat().expect("validated heat").expect("heat plant");
    match &scenario.plant {
        PlantSpec::Chained3 { .. } => aux_family_chained3(heat(), big_delta, opts),
        PlantSpec::Skew { m, k, .. } => aux_family_skew(*m, k, heat(), big_delta, opts),
        PlantSpec::Channels { .. } => aux_family_channels(scenario.plant.channel_config().unwrap(), big_delta, opts),
        other => Err(MatrosovError::Invalid(format!("no family for `{}`", other.kind()))),
    }
}

fn family(scenario: &Scenario, run: &mut Run) -> Outcome {
    let fam = match build_family(scenario) {
        Ok(f) => f,
        Err(e @ (MatrosovError::ProfileUnavailable { .. } | MatrosovError::Invalid(_))) => {
            run.details.insert("family".into(), json!({ "reason": e.to_string() }));
            return Outcome::Fail;
        }
        Err(e) => return Outcome::Error(e.to_string()),
    };
    let mut detail = json!({
        "label": fam.label,
        "j": fam.j(),
        "mu": fam.mu,
        "calibration": to_value(&fam.calibration),
    });
    let mut pass = fam.calibration.uncovered.iter().all(|c| *c == 0);
    let samples = scenario.stages.family.unwrap().bound_samples;
    if samples > 0 {
        match fam.check_bounds(samples, scenario.seed) {
            Ok(b) => {
                pass &= b.pass;
                detail["bounds"] = to_value(&b);
            }
            Err(e) => return Outcome::Error(e.to_string()),
        }
    }
    run.details.insert("family".into(), detail);
    run.family = Some(fam);
    Outcome::verdict(pass)
}

fn assumptions(scenario: &Scenario, run: &mut Run) -> Outcome {
    let Some(fam) = run.family.clone() else {
        return Outcome::Skipped;
    };
    let stage = scenario.stages.assumptions.as_ref().unwrap();
    let ics = match sample_region(
        &Ball::ball(stage.radius, fam.plant.dim()).expect("validated radius"),
        stage.trajectories,
        scenario.seed,
    ) {
        Ok(v) => v,
        Err(e) => return Outcome::Error(e.to_string()),
    };
    let t0s = &scenario.grid.t0;
    let mut trajectories = Vec::with_capacity(ics.len());
    for (k, x0) in ics.iter().enumerate() {
        let t0 = t0s[k % t0s.len()];
        match integrate(&fam.plant, t0, x0, t0 + stage.horizon, stage.dt) {
            Ok(tr) => trajectories.push(tr),
            Err(e) => return Outcome::Error(e.to_string()),
        }
    }
    let bounds = check_derivative_bounds(&fam, &trajectories, stage.tol);
    for v in &bounds.violations {
        run.violation("derivative_bounds", v.index, Some(v.t), v.margin);
    }
    let opts = YSampleOptions {
        seed: scenario.seed,
        ..YSampleOptions::default()
    };
    let samples = match YSamples::draw(&fam, None, opts) {
        Ok(s) => s,
        Err(e) => return Outcome::Error(e.to_string()),
    };
    let chain = check_nonpositivity_chain(&samples, &stage.etas);
    for v in chain.verdicts.iter().filter(|v| !v.pass) {
        run.violation("chain", v.k - 1, None, v.exact_slack.max(v.slack_ratio));
    }
    let mut pass = bounds.pass && bounds.skipped.is_empty() && chain.pass;
    let mut detail = json!({
        "derivative_bounds": {
            "pass": bounds.pass,
            "violations": bounds.violations.len(),
            "skipped": bounds.skipped,
            "worst_margin": bounds.worst_margin,
            "checked_points": bounds.checked_points,
        },
        "chain": to_value(&chain.verdicts),
        "chain_pass": chain.pass,
    });
    if stage.zero_locus {
        let locus = check_zero_locus(&fam, &samples, &stage.etas);
        pass &= locus.pass;
        detail["zero_locus"] = to_value(&locus);
    }
    run.details.insert("assumptions".into(), detail);
    Outcome::verdict(pass)
}

fn gains(scenario: &Scenario, run: &mut Run) -> Outcome {
    let Some(fam) = run.family.as_ref() else {
        return Outcome::Skipped;
    };
    let opts = GainOptions {
        samples: YSampleOptions {
            seed: scenario.seed,
            ..YSampleOptions::default()
        },
        ..GainOptions::default()
    };
    match find_matrosov_gains(fam, scenario.region.delta, opts) {
        Ok(cert) => {
            let pass = cert.reverification.pass;
            if !pass {
                run.violation("gains", cert.k.len(), None, cert.reverification.worst_z - cert.reverification.bound);
            }
            run.details.insert("gains".into(), to_value(&cert));
            run.certificate = Some(cert);
            Outcome::verdict(pass)
        }
        Err(e) => {
            let (index, value) = match &e {
                MatrosovError::NoEpsilon { value, .. } | MatrosovError::CertificateViolated { value, .. } => {
                    (fam.j() - 1, *value)
                }
                MatrosovError::NoGain { level, value, .. } => (*level, *value),
                _ => return Outcome::Error(e.to_string()),
            };
            run.violation("gains", index, None, value);
            run.details.insert("gains".into(), json!({ "reason": e.to_string() }));
            Outcome::Fail
        }
    }
}

fn stability_violations(run: &mut Run, stage: &str, report: &matrosov::matrosov::StabilityReport, sigma: f64) {
    for (k, w) in report.witnesses.iter().enumerate() {
        run.violation(stage, k, Some(w.t0), w.final_norm - sigma);
    }
}

fn ugs(scenario: &Scenario, run: &mut Run) -> Outcome {
    let stage = scenario.stages.ugs.as_ref().unwrap();
    let plant = scenario.plant.build().expect("validated plant");
    match verify_ugs(&plant, &stage.radii, &grid(scenario, stage.horizon)) {
        Ok(rep) => {
            stability_violations(run, "ugs", &rep, 0.0);
            let pass = rep.pass;
            run.details.insert("ugs".into(), to_value(&rep));
            Outcome::verdict(pass)
        }
        Err(e) => Outcome::Error(e.to_string()),
    }
}

fn uga(scenario: &Scenario, run: &mut Run) -> Outcome {
    let stage = scenario.stages.uga.as_ref().unwrap();
    let plant = scenario.plant.build().expect("validated plant");
    match verify_uga(&plant, stage.radius, stage.sigma, &grid(scenario, stage.horizon)) {
        Ok(rep) => {
            stability_violations(run, "uga", &rep, stage.sigma);
            let mut pass = rep.pass;
            let mut detail = to_value(&rep);
            detail["uniform_settling_time"] = json!(rep.uniform_settling_time());
            if stage.compare_prediction {
                let within = run.certificate.as_ref().and_then(|c| rep.within_prediction(c));
                pass &= within == Some(true);
                detail["within_prediction"] = json!(within);
            }
            run.details.insert("uga".into(), detail);
            Outcome::verdict(pass)
        }
        Err(e) => Outcome::Error(e.to_string()),
    }
}

fn write_csv<T: Serialize>(path: &Path, header: &[String], rows: impl IntoIterator<Item = T>) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()
}

fn write_artifacts(scenario: &Scenario, run: &Run, summary: &Summary, out: &Path) -> io::Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(SCENARIO_JSON), scenario.to_json())?;
    let dim = scenario.plant.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    let every = scenario.stages.simulate.as_ref().map_or(1, |s| s.record_every);
    let rows: Vec<Vec<f64>> = run
        .trajectory
        .iter()
        .flat_map(|tr| {
            let last = tr.len() - 1;
            (0..tr.len())
                .filter(move |k| k % every == 0 || *k == last)
                .map(move |k| std::iter::once(tr.time(k)).chain(tr.states[k].iter().copied()).collect())
        })
        .collect();
    write_csv(&out.join(TRAJECTORIES_CSV), &header, rows)?;
    let header: Vec<String> = ["radius", "theta", "gamma"].map(String::from).to_vec();
    write_csv(&out.join(PE_PROFILE_CSV), &header, run.profile.iter().flat_map(|p| p.rows()))?;
    let header: Vec<String> = ["stage", "index", "t", "margin"].map(String::from).to_vec();
    write_csv(&out.join(VIOLATIONS_CSV), &header, &run.violations)?;
    let text = serde_json::to_string_pretty(summary).expect("summary serializes") + "\n";
    fs::write(out.join(SUMMARY_JSON), text)
}

/// Runs the scenario, writes every artifact to `out`, and returns the summary.
/// The exit code is 0 when every selected stage passed and 1 otherwise.
pub fn run_scenario(scenario: &Scenario, out: &Path) -> io::Result<Summary> {
    let mut run = Run::default();
    let mut halted = false;
    for stage in selected(scenario) {
        if halted {
            run.verdicts.insert(stage.to_string(), Outcome::NotRun);
            continue;
        }
        let outcome = match stage {
            "simulate" => simulate(scenario, &mut run),
            "pe_check" => pe_check(scenario, &mut run),
            "family" => family(scenario, &mut run),
            "assumptions" => assumptions(scenario, &mut run),
            "gains" => gains(scenario, &mut run),
            "ugs" => ugs(scenario, &mut run),
            "uga" => uga(scenario, &mut run),
            _ => unreachable!("unknown stage {stage}"),
        };
        halted = matches!(outcome, Outcome::Error(_));
        let detail = run.details.remove(stage).unwrap_or(Value::Null);
        run.record(stage, outcome, detail);
    }
    let all_pass = run.verdicts.values().all(|o| *o == Outcome::Pass);
    let summary = Summary {
        scenario: scenario.name.clone(),
        exit_code: if all_pass { 0 } else { 1 },
        verdicts: run.verdicts.iter().map(|(k, v)| (k.clone(), v.label().to_string())).collect(),
        details: run.details.clone(),
    };
    write_artifacts(scenario, &run, &summary, out)?;
    Ok(summary)
}
