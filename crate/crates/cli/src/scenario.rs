//! Scenario files: what to build, which checks to run, and how.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use matrosov::dynamics::TimeVaryingSystem;
use matrosov::plants::{
    chained3_closed_loop, chained_n_closed_loop, channel_network_plant, make_heat, skew_symmetric_plant, ChainedGains,
    ChannelBias, ChannelNetworkConfig, HeatFunction, HeatKind, ModulatedQuadratic, Sector,
};

/// A scenario that failed to parse or validate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    pub source: String,
    /// 1-based line of the offending token, when known.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{line}: {}", self.source, self.message),
            None => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    /// Demonstration plants carry no checker; only their simulation is run.
    #[serde(default)]
    pub demo: bool,
    pub plant: PlantSpec,
    pub region: RegionSpec,
    pub grid: GridSpec,
    pub stages: Stages,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSpec {
    /// Three-state chained form under the time-varying controller.
    Chained3 { heat: HeatKind },
    /// `n`-state chained form.
    ChainedN {
        n: usize,
        #[serde(default)]
        gains: Option<ChainedGains>,
        heat: HeatKind,
    },
    /// `ẏ = u, ż = A(u)z` with skew-symmetric `A`.
    Skew { m: usize, k: Vec<f64>, heat: HeatKind },
    /// `n` identity passive blocks joined by `n − 1` channels.
    Channels {
        n: usize,
        #[serde(default = "one")]
        block_dim: usize,
        ga: Vec<ModulatedQuadratic>,
        gb: Vec<ChannelBias>,
        #[serde(default)]
        sector: Sector,
    },
    /// `ẋ = −x + c·sin(t)·z, ż = −z`: a time-varying cascade.
    Cascade { coupling: f64 },
}

fn one() -> usize {
    1
}

/// `Δ` (radius the family is built for) and `δ` (inner radius of the gains).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub big_delta: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t0: Vec<f64>,
    pub batch: usize,
    pub dt: f64,
    pub horizon: f64,
}

/// Selected stages; absent stages are not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Stages {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pe_check: Option<PeStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumptions: Option<AssumptionStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<GainStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ugs: Option<UgsStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uga: Option<UgaStage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateStage {
    /// Initial state; defaults to a point of norm `radius`.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "unit")]
    pub radius: f64,
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Keep every `record_every`-th integration step in the CSV.
    #[serde(default = "one")]
    pub record_every: usize,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeStage {
    /// Point at which excitation is checked (coordinates of the excited part).
    pub point: Vec<f64>,
    pub delta: f64,
    pub window: f64,
    pub mu: f64,
    pub horizon: f64,
    #[serde(default = "radii_count")]
    pub radii_count: usize,
}

fn radii_count() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FamilyStage {
    /// Number of random samples for the `|Vᵢ| ≤ μ` check (0 skips it).
    #[serde(default)]
    pub bound_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionStage {
    pub trajectories: usize,
    pub radius: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Tolerance on `V̇ᵢ − Yᵢ` along trajectories.
    pub tol: f64,
    pub etas: Vec<f64>,
    /// Also run the zero-locus check.
    #[serde(default)]
    pub zero_locus: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GainStage {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UgsStage {
    pub radii: Vec<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UgaStage {
    pub radius: f64,
    pub sigma: f64,
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Also require the settling time not to exceed the certificate's prediction.
    #[serde(default)]
    pub compare_prediction: bool,
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl Scenario {
    /// Parses JSON text; `source` names it in diagnostics.
    pub fn parse(text: &str, source: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError {
            source: source.to_string(),
            line: Some(e.line()),
            message: e.to_string(),
        })?;
        scenario.validate().map_err(|message| ScenarioError {
            source: source.to_string(),
            line: None,
            message,
        })?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let source = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
            source: source.clone(),
            line: None,
            message: e.to_string(),
        })?;
        Self::parse(&text, &source)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("name must not be empty".into());
        }
        let RegionSpec { big_delta, delta } = self.region;
        if !positive(big_delta) || !positive(delta) || delta >= big_delta {
            return Err(format!("need 0 < delta < big_delta, got delta = {delta}, big_delta = {big_delta}"));
        }
        let g = &self.grid;
        if g.t0.is_empty() || g.batch == 0 || !positive(g.dt) || !positive(g.horizon) {
            return Err("grid needs t0 values, a positive batch, dt and horizon".into());
        }
        if g.t0.iter().any(|t| !t.is_finite()) {
            return Err("grid t0 values must be finite".into());
        }
        self.plant.build().map_err(|e| format!("plant: {e}"))?;
        let s = &self.stages;
        if self.demo && (s.pe_check.is_some() || s.family.is_some() || s.assumptions.is_some() || s.gains.is_some()) {
            return Err("demo scenarios carry no checker; select only simulate, ugs or uga".into());
        }
        let has_family = self.plant.has_family();
        if !has_family && (s.family.is_some() || s.assumptions.is_some() || s.gains.is_some()) {
            return Err(format!("no auxiliary family exists for plant `{}`", self.plant.kind()));
        }
        if (s.assumptions.is_some() || s.gains.is_some()) && s.family.is_none() {
            return Err("assumptions and gains need the family stage".into());
        }
        if let Some(sim) = &s.simulate {
            if sim.record_every == 0 || !positive(sim.radius) || sim.horizon.is_some_and(|h| !positive(h)) {
                return Err("simulate needs record_every >= 1, radius > 0, horizon > 0".into());
            }
            if let Some(x0) = &sim.x0 {
                if x0.len() != self.plant.dim() {
                    return Err(format!("simulate x0 has {} entries, plant has {}", x0.len(), self.plant.dim()));
                }
            }
        }
        if let Some(pe) = &s.pe_check {
            if self.demo || self.plant.pe_dim().is_none() {
                return Err(format!("no excitation probe for plant `{}`", self.plant.kind()));
            }
            let dim = self.plant.pe_dim().unwrap_or(0);
            if pe.point.len() != dim {
                return Err(format!("pe_check point needs {dim} entries, got {}", pe.point.len()));
            }
            if !positive(pe.window) || !positive(pe.mu) || !positive(pe.horizon) || pe.delta < 0.0 || pe.radii_count == 0 {
                return Err("pe_check needs window, mu, horizon > 0, delta >= 0 and radii_count >= 1".into());
            }
        }
        if let Some(a) = &s.assumptions {
            if a.trajectories == 0 || !positive(a.radius) || !positive(a.horizon) || !positive(a.dt) || !positive(a.tol) {
                return Err("assumptions need trajectories, radius, horizon, dt and tol > 0".into());
            }
            if a.etas.is_empty() || a.etas.iter().any(|e| !positive(*e)) {
                return Err("assumptions need positive etas".into());
            }
        }
        if let Some(u) = &s.ugs {
            if u.radii.is_empty() || u.radii.iter().any(|r| !positive(*r)) || u.horizon.is_some_and(|h| !positive(h)) {
                return Err("ugs needs positive radii and horizon".into());
            }
        }
        if let Some(u) = &s.uga {
            if !positive(u.radius) || !positive(u.sigma) || u.horizon.is_some_and(|h| !positive(h)) {
                return Err("uga needs positive radius, sigma and horizon".into());
            }
            if u.compare_prediction && s.gains.is_none() {
                return Err("uga.compare_prediction needs the gains stage".into());
            }
        }
        Ok(())
    }
}

impl PlantSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            PlantSpec::Chained3 { .. } => "chained3",
            PlantSpec::ChainedN { .. } => "chained_n",
            PlantSpec::Skew { .. } => "skew",
            PlantSpec::Channels { .. } => "channels",
            PlantSpec::Cascade { .. } => "cascade",
        }
    }

    /// Families exist for the three-state chained form, the skew form and channels.
    pub fn has_family(&self) -> bool {
        matches!(self, PlantSpec::Chained3 { .. } | PlantSpec::Skew { .. } | PlantSpec::Channels { .. })
    }

    /// Heat function sized for the plant, if it has one.
    pub fn heat(&self) -> Result<Option<HeatFunction>, String> {
        let (kind, z_dim) = match self {
            PlantSpec::Chained3 { heat } => (*heat, 2),
            PlantSpec::ChainedN { n, heat, .. } => (*heat, n.saturating_sub(1)),
            PlantSpec::Skew { m, heat, .. } => (*heat, *m),
            _ => return Ok(None),
        };
        make_heat(kind, z_dim).map(Some).map_err(|e| e.to_string())
    }

    pub fn channel_config(&self) -> Option<ChannelNetworkConfig> {
        match self {
            PlantSpec::Channels { n, block_dim, ga, gb, sector } => {
                Some(ChannelNetworkConfig::identity(*n, *block_dim, ga.clone(), gb.clone(), *sector))
            }
            _ => None,
        }
    }

    /// Dimension of the argument of the excitation probe: `ξ` for heat
    /// plants, the block states for channels.
    pub fn pe_dim(&self) -> Option<usize> {
        if let Some(cfg) = self.channel_config() {
            return Some(cfg.x_dim());
        }
        self.heat().ok().flatten().map(|h| h.xi_dim())
    }

    pub fn dim(&self) -> usize {
        self.build().map(|p| p.dim()).unwrap_or(0)
    }

    pub fn build(&self) -> Result<TimeVaryingSystem, String> {
        let heat = self.heat()?;
        let plant = match self {
            PlantSpec::Chained3 { .. } => chained3_closed_loop(heat.unwrap()),
            PlantSpec::ChainedN { n, gains, .. } => {
                let gains = gains.clone().unwrap_or_else(|| ChainedGains::unit(*n));
                chained_n_closed_loop(*n, &gains, heat.unwrap())
            }
            PlantSpec::Skew { m, k, .. } => skew_symmetric_plant(*m, k, heat.unwrap()),
            PlantSpec::Channels { .. } => channel_network_plant(self.channel_config().unwrap()),
            PlantSpec::Cascade { coupling } => {
                if !coupling.is_finite() {
                    return Err(format!("coupling must be finite, got {coupling}"));
                }
                let c = *coupling;
                return Ok(TimeVaryingSystem::new(2, "cascade", move |t, x| {
                    vec![-x[0] + c * t.sin() * x[1], -x[1]]
                }));
            }
        };
        plant.map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "demo",
        "description": "cascade",
        "demo": true,
        "plant": { "kind": "cascade", "coupling": 1.0 },
        "region": { "big_delta": 2.0, "delta": 0.1 },
        "grid": { "t0": [0.0], "batch": 2, "dt": 0.1, "horizon": 1.0 },
        "stages": { "simulate": {} }
    }"#;

    #[test]
    fn round_trips_through_json() {
        let s = Scenario::parse(MINIMAL, "minimal").unwrap();
        let again = Scenario::parse(&s.to_json(), "again").unwrap();
        assert_eq!(s, again);
        assert_eq!(s.stages.simulate.as_ref().unwrap().record_every, 1);
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let broken = MINIMAL.replace("\"coupling\": 1.0", "\"coupling\": ");
        let err = Scenario::parse(&broken, "broken").unwrap_err();
        assert_eq!(err.line, Some(5));
        assert!(err.to_string().starts_with("broken:5:"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let extra = MINIMAL.replace("\"demo\": true,", "\"demo\": true, \"colour\": 3,");
        assert!(Scenario::parse(&extra, "extra").is_err());
    }

    #[test]
    fn demo_plants_take_no_checkers() {
        let bad = MINIMAL.replace("\"simulate\": {}", "\"simulate\": {}, \"family\": {}");
        let err = Scenario::parse(&bad, "bad").unwrap_err();
        assert!(err.message.contains("demo"), "{err}");
    }

    #[test]
    fn region_must_nest() {
        let bad = MINIMAL.replace("\"delta\": 0.1", "\"delta\": 3.0");
        assert!(Scenario::parse(&bad, "bad").is_err());
    }

    #[test]
    fn heat_dimensions_follow_the_plant() {
        let skew = PlantSpec::Skew {
            m: 4,
            k: vec![1.0; 3],
            heat: HeatKind::QuadraticSine { kappa: 1.0, freq: 1.0 },
        };
        assert_eq!(skew.dim(), 5);
        assert_eq!(skew.heat().unwrap().unwrap().z_dim(), 4);
        let chained = PlantSpec::ChainedN {
            n: 4,
            gains: None,
            heat: HeatKind::Zero,
        };
        assert_eq!(chained.dim(), 4);
        assert!(!chained.has_family());
    }
}
