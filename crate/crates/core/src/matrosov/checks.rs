use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::family::AuxiliaryFamily;
use super::MatrosovError;
use crate::dynamics::{norm, sample_region, RegionSpec, Trajectory};

/// One sample where `V̇ᵢ − Yᵢ` exceeded the tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub trajectory: usize,
    /// 0-based index `i` of the bound.
    pub index: usize,
    pub t: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBoundReport {
    pub tol: f64,
    pub violations: Vec<BoundViolation>,
    /// Largest `V̇ᵢ − Yᵢ` seen, per bound.
    pub worst_margin: Vec<f64>,
    pub checked_points: usize,
    /// Trajectories that left the family's region.
    pub skipped: Vec<usize>,
    pub pass: bool,
}

/// Centered differences of every `Vᵢ` along each trajectory, compared with
/// `Yᵢ` evaluated at the same sample.
pub fn check_derivative_bounds(
    family: &AuxiliaryFamily,
    trajectories: &[Trajectory],
    tol: f64,
) -> DerivativeBoundReport {
    let j = family.j();
    let per_traj: Vec<Option<(Vec<BoundViolation>, Vec<f64>, usize)>> = trajectories
        .par_iter()
        .enumerate()
        .map(|(n, tr)| {
            let times: Vec<f64> = tr.times().collect();
            let inside = tr
                .states
                .iter()
                .zip(&times)
                .all(|(s, t)| family.region.contains(&(family.to_x)(*t, s)));
            if !inside {
                return None;
            }
            let values: Vec<Vec<f64>> = tr.states.iter().zip(&times).map(|(s, t)| family.v_values(*t, s)).collect();
            let mut viol = Vec::new();
            let mut worst = vec![f64::NEG_INFINITY; j];
            let mut count = 0;
            for k in 1..tr.len().saturating_sub(1) {
                let h = times[k + 1] - times[k - 1];
                let y = family.y_along(times[k], &tr.states[k]);
                count += 1;
                for i in 0..j {
                    let vdot = (values[k + 1][i] - values[k - 1][i]) / h;
                    let margin = vdot - y[i];
                    worst[i] = worst[i].max(margin);
                    if margin > tol {
                        viol.push(BoundViolation {
                            trajectory: n,
                            index: i,
                            t: times[k],
                            margin,
                        });
                    }
                }
            }
            Some((viol, worst, count))
        })
        .collect();
    let mut report = DerivativeBoundReport {
        tol,
        violations: Vec::new(),
        worst_margin: vec![f64::NEG_INFINITY; j],
        checked_points: 0,
        skipped: Vec::new(),
        pass: false,
    };
    for (n, r) in per_traj.into_iter().enumerate() {
        match r {
            None => report.skipped.push(n),
            Some((v, w, c)) => {
                report.violations.extend(v);
                for i in 0..j {
                    report.worst_margin[i] = report.worst_margin[i].max(w[i]);
                }
                report.checked_points += c;
            }
        }
    }
    report.pass = report.violations.is_empty() && report.checked_points > 0;
    report
}

/// How `(X, ψ)` points are drawn for the assumption checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YSampleOptions {
    /// Upper bound on the size of the product ladder grid.
    pub max_grid: usize,
    /// Extra low-discrepancy points.
    pub scattered: usize,
    pub seed: u64,
    /// Perturb the ladder magnitudes per axis (for independent re-checks).
    pub jitter: bool,
}

impl Default for YSampleOptions {
    fn default() -> Self {
        Self {
            max_grid: 2_000_000,
            scattered: 20_000,
            seed: 7,
            jitter: false,
        }
    }
}

/// Points `(X, ψ)` with every `Yᵢ` evaluated, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct YSamples {
    pub x_dim: usize,
    pub psi_dim: usize,
    pub j: usize,
    points: Vec<f64>,
    values: Vec<f64>,
}

impl YSamples {
    pub fn len(&self) -> usize {
        self.values.len() / self.j.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, n: usize) -> &[f64] {
        let d = self.x_dim + self.psi_dim;
        &self.points[n * d..(n + 1) * d]
    }

    pub fn x(&self, n: usize) -> &[f64] {
        &self.point(n)[..self.x_dim]
    }

    pub fn psi(&self, n: usize) -> &[f64] {
        &self.point(n)[self.x_dim..]
    }

    pub fn y(&self, n: usize) -> &[f64] {
        &self.values[n * self.j..(n + 1) * self.j]
    }

    /// Evaluate a family's bounds on explicit points.
    pub fn from_points(family: &AuxiliaryFamily, pts: Vec<Vec<f64>>) -> Self {
        let x_dim = family.x_dim();
        let values: Vec<f64> = pts
            .par_iter()
            .flat_map_iter(|p| family.y_values(&p[..x_dim], &p[x_dim..]))
            .collect();
        Self {
            x_dim,
            psi_dim: family.psi_dim,
            j: family.j(),
            points: pts.into_iter().flatten().collect(),
            values,
        }
    }

    /// Ladder grid (fine near zero, out to the bounds) plus scattered points
    /// of `region × B(μ)`; with `shell = Some(δ)` only `‖X‖ ≥ δ` is kept.
    pub fn draw(
        family: &AuxiliaryFamily,
        shell: Option<f64>,
        opts: YSampleOptions,
    ) -> Result<Self, MatrosovError> {
        let x_dim = family.x_dim();
        let d = x_dim + family.psi_dim;
        let mu = family.mu.max(1e-12);
        let inner = shell.unwrap_or(0.0);
        let keep = |p: &[f64]| {
            let nx = norm(&p[..x_dim]);
            family.region.contains(&p[..x_dim]) && nx >= inner && norm(&p[x_dim..]) <= mu * (1.0 + 1e-12)
        };

        // Magnitudes in order of priority; the grid keeps the longest prefix that fits.
        let priority: [f64; 9] = [0.0, 1.0, 1e-3, 0.1, 1e-2, 0.3, 1e-4, 0.03, 0.5];
        let mut jitter_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x1177);
        let mut axis_values = |bound: f64, levels: usize| -> Vec<f64> {
            let mut v = vec![0.0];
            for &a in &priority[1..levels] {
                let f = if opts.jitter { jitter_rng.gen_range(-0.7f64..0.7).exp() } else { 1.0 };
                // `1.0` in the priority list stands for the bound itself.
                let a = if a == 1.0 { bound } else { (a * f).min(bound) };
                v.push(a);
                v.push(-a);
            }
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
            v
        };
        let mut levels = priority.len();
        while levels > 1 && (2 * levels - 1).checked_pow(d as u32).is_none_or(|n| n > opts.max_grid) {
            levels -= 1;
        }
        let mut axes: Vec<Vec<f64>> = Vec::with_capacity(d);
        for i in 0..x_dim {
            let bound = family
                .region
                .blocks
                .iter()
                .find(|(r, _)| r.contains(&i))
                .map(|(_, rad)| *rad)
                .unwrap_or(0.0);
            axes.push(axis_values(bound, levels));
        }
        for _ in 0..family.psi_dim {
            axes.push(axis_values(mu, levels));
        }
        let total: usize = axes.iter().map(Vec::len).product();
        let grid: Vec<Vec<f64>> = (0..total)
            .into_par_iter()
            .filter_map(|mut n| {
                let mut p = Vec::with_capacity(d);
                for a in &axes {
                    p.push(a[n % a.len()]);
                    n /= a.len();
                }
                keep(&p).then_some(p)
            })
            .collect();

        if opts.scattered == 0 {
            return Ok(Self::from_points(family, grid));
        }
        let xs = match shell {
            Some(delta) => {
                let outer = family.region.blocks.iter().map(|(_, r)| r * r).sum::<f64>().sqrt();
                sample_region(&RegionSpec::annulus(delta, outer, x_dim)?, opts.scattered * 4, opts.seed)?
            }
            None => family.region.sample(opts.scattered, opts.seed)?,
        };
        let psis = sample_region(&RegionSpec::ball(mu, family.psi_dim.max(1))?, xs.len(), opts.seed ^ 0x51)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
        let mut pts = grid;
        let mut added = 0;
        for x in xs {
            if added >= opts.scattered {
                break;
            }
            let psi = &psis[rng.gen_range(0..psis.len())];
            let mut p = x;
            p.extend_from_slice(&psi[..family.psi_dim]);
            if keep(&p) {
                pts.push(p);
                added += 1;
            }
        }
        Ok(Self::from_points(family, pts))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLevel {
    /// 1-based index `k` of the bound under test.
    pub k: usize,
    pub eta: f64,
    /// Samples satisfying `|Yᵢ| ≤ η` for all `i < k`.
    pub count: usize,
    pub max_y: f64,
    /// `max(max_y, 0)`
    pub slack: f64,
    /// `slack / η`
    pub c: f64,
    pub vacuous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainVerdict {
    pub k: usize,
    pub pass: bool,
    pub vacuous: bool,
    pub slack_ratio: f64,
    /// `max(Y_k, 0)` over samples where every earlier bound is exactly zero.
    pub exact_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub levels: Vec<ChainLevel>,
    pub verdicts: Vec<ChainVerdict>,
    pub pass: bool,
}

/// Slack below which a level counts as exactly nonpositive.
const EXACT_SLACK: f64 = 1e-12;
/// Required reduction of slack (or radius) from the largest to the smallest `η`.
const SHRINK_FACTOR: f64 = 3.0;

fn sorted_etas(etas: &[f64]) -> Vec<f64> {
    let mut e = etas.to_vec();
    e.sort_by(|a, b| b.partial_cmp(a).unwrap());
    e
}

/// For each `k` and `η`: the largest `Y_k` over samples with `|Yᵢ| ≤ η`
/// for all `i < k`. A level passes when its slack vanishes at the smallest
/// `η` or shrinks by the factor 3 from the largest to the smallest `η`, and
/// `Y_k ≤ 0` wherever the earlier bounds vanish exactly.
pub fn check_nonpositivity_chain(samples: &YSamples, etas: &[f64]) -> ChainReport {
    let etas = sorted_etas(etas);
    let j = samples.j;
    let n = samples.len();
    // Largest |Yᵢ| over i < k, for every point and k: prefix maxima.
    let mut levels = Vec::new();
    let mut verdicts = Vec::new();
    for k in 1..=j {
        let mut per_eta = Vec::new();
        for &eta in &etas {
            let (count, max_y) = (0..n)
                .into_par_iter()
                .filter(|&p| samples.y(p)[..k - 1].iter().all(|v| v.abs() <= eta))
                .map(|p| (1usize, samples.y(p)[k - 1]))
                .reduce(|| (0, f64::NEG_INFINITY), |a, b| (a.0 + b.0, a.1.max(b.1)));
            let slack = if count == 0 { 0.0 } else { max_y.max(0.0) };
            per_eta.push(ChainLevel {
                k,
                eta,
                count,
                max_y,
                slack,
                c: slack / eta,
                vacuous: count == 0,
            });
        }
        let first = per_eta.first().map(|l| l.slack).unwrap_or(0.0);
        let last = per_eta.last().map(|l| l.slack).unwrap_or(0.0);
        let ratio = if last > 0.0 { first / last } else { f64::INFINITY };
        let vacuous = per_eta.iter().any(|l| l.vacuous);
        let exact_slack = (0..n)
            .into_par_iter()
            .filter(|&p| samples.y(p)[..k - 1].iter().all(|v| *v == 0.0))
            .map(|p| samples.y(p)[k - 1].max(0.0))
            .reduce(|| 0.0, f64::max);
        verdicts.push(ChainVerdict {
            k,
            pass: (last <= EXACT_SLACK || ratio >= SHRINK_FACTOR) && exact_slack <= EXACT_SLACK,
            vacuous,
            slack_ratio: ratio,
            exact_slack,
        });
        levels.extend(per_eta);
    }
    let pass = verdicts.iter().all(|v| v.pass);
    ChainReport { levels, verdicts, pass }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocusLevel {
    pub eta: f64,
    /// Sampled points with every `|Yᵢ| ≤ η`.
    pub count: usize,
    /// Further such points found by line refinement.
    pub refined: usize,
    /// Largest `‖X‖` with every `|Yᵢ| ≤ η`.
    pub radius: f64,
    pub witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroLocusReport {
    pub levels: Vec<LocusLevel>,
    pub pass: bool,
}

/// Seeds per `(η, k)` examined by the line refinement.
const REFINE_SEEDS: usize = 4000;
/// Points per coordinate line scanned for sign changes.
const REFINE_LINE: usize = 401;

/// Points with every `|Yᵢ| ≤ η` that a grid misses when one `Y_k` changes
/// sign across a thin band: from each point satisfying all constraints but
/// `k`, scan every `X` coordinate line for roots of `Y_k` and bisect them.
fn refine_locus(family: &AuxiliaryFamily, samples: &YSamples, eta: f64) -> Vec<Vec<f64>> {
    let j = samples.j;
    let x_dim = samples.x_dim;
    let feasible = |y: &[f64]| y.iter().all(|v| v.abs() <= eta);
    let mut found = Vec::new();
    for k in 0..j {
        let seeds: Vec<usize> = (0..samples.len())
            .filter(|&n| {
                let y = samples.y(n);
                y[k].abs() > eta && y.iter().enumerate().all(|(i, v)| i == k || v.abs() <= eta)
            })
            .collect();
        let stride = seeds.len().div_ceil(REFINE_SEEDS).max(1);
        let roots: Vec<Vec<f64>> = seeds
            .par_iter()
            .step_by(stride)
            .flat_map_iter(|&n| {
                let base = samples.point(n).to_vec();
                let mut out = Vec::new();
                for c in 0..x_dim {
                    let bound = family
                        .region
                        .blocks
                        .iter()
                        .find(|(r, _)| r.contains(&c))
                        .map(|(_, rad)| *rad)
                        .unwrap_or(0.0);
                    let yk = |v: f64| {
                        let mut p = base.clone();
                        p[c] = v;
                        family.y[k].eval(&p[..x_dim], &p[x_dim..])
                    };
                    let grid: Vec<f64> = (0..REFINE_LINE)
                        .map(|q| bound * (2.0 * q as f64 / (REFINE_LINE - 1) as f64 - 1.0))
                        .collect();
                    let vals: Vec<f64> = grid.iter().map(|&v| yk(v)).collect();
                    for q in 1..REFINE_LINE {
                        if vals[q - 1].signum() == vals[q].signum() {
                            continue;
                        }
                        let (mut lo, mut hi, mut flo) = (grid[q - 1], grid[q], vals[q - 1]);
                        for _ in 0..60 {
                            let mid = 0.5 * (lo + hi);
                            let fm = yk(mid);
                            if fm.signum() == flo.signum() {
                                lo = mid;
                                flo = fm;
                            } else {
                                hi = mid;
                            }
                        }
                        let mut p = base.clone();
                        p[c] = 0.5 * (lo + hi);
                        if family.region.contains(&p[..x_dim]) && feasible(&family.y_values(&p[..x_dim], &p[x_dim..])) {
                            out.push(p);
                        }
                    }
                }
                out
            })
            .collect();
        found.extend(roots);
    }
    found
}

/// `r(η) = max ‖X‖` over points with `|Yᵢ| ≤ η` for all `i` (samples plus
/// line refinement); passes when `r` at the smallest `η` is below a third of
/// `r` at the largest.
pub fn check_zero_locus(family: &AuxiliaryFamily, samples: &YSamples, etas: &[f64]) -> ZeroLocusReport {
    let etas = sorted_etas(etas);
    let n = samples.len();
    let levels: Vec<LocusLevel> = etas
        .iter()
        .map(|&eta| {
            let (count, radius, idx) = (0..n)
                .into_par_iter()
                .filter(|&p| samples.y(p).iter().all(|v| v.abs() <= eta))
                .map(|p| (1usize, norm(samples.x(p)), p))
                .reduce(
                    || (0, 0.0, usize::MAX),
                    |a, b| {
                        let best = if b.1 > a.1 || (b.1 == a.1 && b.2 < a.2) { b } else { a };
                        (a.0 + b.0, best.1, best.2)
                    },
                );
            let mut level = LocusLevel {
                eta,
                count,
                refined: 0,
                radius,
                witness: (idx != usize::MAX).then(|| samples.point(idx).to_vec()),
            };
            let extra = refine_locus(family, samples, eta);
            level.refined = extra.len();
            for p in extra {
                let r = norm(&p[..samples.x_dim]);
                if r > level.radius {
                    level.radius = r;
                    level.witness = Some(p);
                }
            }
            level
        })
        .collect();
    let first = levels.first().map(|l| l.radius).unwrap_or(0.0);
    let last = levels.last().map(|l| l.radius).unwrap_or(0.0);
    let pass = first == 0.0 || last < first / SHRINK_FACTOR;
    ZeroLocusReport { levels, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, TimeVaryingSystem};
    use crate::matrosov::family::{BallProduct, CalibrationReport, YBound};
    use std::sync::Arc;

    /// Family on `ẋ = −x` (2-d) with the given bounds; `V₁ = ½‖x‖²`.
    fn toy(y: Vec<YBound>, psi_dim: usize) -> AuxiliaryFamily {
        let j = y.len();
        let id = Arc::new(|_: f64, s: &[f64]| s.to_vec());
        AuxiliaryFamily {
            label: "toy".into(),
            plant: TimeVaryingSystem::new(2, "decay", |_, x| vec![-x[0], -x[1]]),
            v: (0..j).map(|_| Arc::new(|_: f64, s: &[f64]| 0.5 * (s[0] * s[0] + s[1] * s[1])) as _).collect(),
            phi: Arc::new(move |_, _| vec![0.0; psi_dim]),
            y,
            to_x: id.clone(),
            lift: id,
            region: BallProduct::single(2, 1.0),
            psi_dim,
            big_delta: 1.0,
            mu: 1.0,
            calibration: CalibrationReport::default(),
            profiles: vec![],
        }
    }

    #[test]
    fn exact_dissipation_has_no_violations_and_shift_is_caught() {
        let fam = toy(vec![YBound::exact("Y1", |x, _| -(x[0] * x[0] + x[1] * x[1]))], 0);
        let trs: Vec<Trajectory> = [[0.5, 0.2], [-0.3, 0.6]]
            .iter()
            .map(|x0| integrate(&fam.plant, 0.0, x0, 3.0, 0.01).unwrap())
            .collect();
        let ok = check_derivative_bounds(&fam, &trs, 0.1);
        assert!(ok.pass && ok.violations.is_empty(), "{:?}", ok.worst_margin);
        assert!(ok.worst_margin[0].abs() < 1e-4);
        let bad = check_derivative_bounds(&fam.clone().with_y_offset(0, -1.0), &trs, 0.1);
        assert!(!bad.pass && bad.violations.len() > 100);
    }

    #[test]
    fn constant_function_with_zero_bound() {
        let mut fam = toy(vec![YBound::exact("Y1", |_, _| 0.0)], 0);
        fam.v = vec![Arc::new(|_, _| 3.0)];
        let tr = integrate(&fam.plant, 0.0, &[0.4, 0.1], 2.0, 0.01).unwrap();
        let r = check_derivative_bounds(&fam, &[tr], 0.1);
        assert!(r.pass);
        assert_eq!(r.worst_margin[0], 0.0);
    }

    #[test]
    fn escaping_trajectories_are_skipped() {
        let fam = toy(vec![YBound::exact("Y1", |_, _| 0.0)], 0);
        let tr = integrate(&fam.plant, 0.0, &[2.0, 0.0], 1.0, 0.01).unwrap();
        let r = check_derivative_bounds(&fam, &[tr], 0.1);
        assert_eq!(r.skipped, vec![0]);
        assert!(!r.pass);
    }

    #[test]
    fn grid_has_fine_levels_and_respects_region() {
        let fam = toy(vec![YBound::exact("Y1", |x, _| -x[0] * x[0])], 1);
        let s = YSamples::draw(&fam, None, YSampleOptions { scattered: 100, ..Default::default() }).unwrap();
        assert!((0..s.len()).all(|n| norm(s.x(n)) <= 1.0 + 1e-12 && s.psi(n)[0].abs() <= 1.0 + 1e-12));
        assert!((0..s.len()).any(|n| s.x(n) == [1e-4, 0.0]));
        let shell = YSamples::draw(&fam, Some(0.1), YSampleOptions { scattered: 100, ..Default::default() }).unwrap();
        assert!((0..shell.len()).all(|n| norm(shell.x(n)) >= 0.1));
    }

    #[test]
    fn chain_trivial_first_level_and_constant_failure() {
        let good = toy(
            vec![
                YBound::exact("Y1", |x, _| -x[0] * x[0]),
                YBound::exact("Y2", |x, _| -x[1] * x[1] + x[0].abs()),
            ],
            0,
        );
        let s = YSamples::draw(&good, None, YSampleOptions::default()).unwrap();
        let r = check_nonpositivity_chain(&s, &[1e-1, 1e-2, 1e-3]);
        assert!(r.pass, "{:?}", r.verdicts);
        assert_eq!(r.levels[0].slack, 0.0);

        let bad = good.clone().with_y(1, YBound::exact("Y2", |_, _| 1.0));
        let s = YSamples::draw(&bad, None, YSampleOptions::default()).unwrap();
        let r = check_nonpositivity_chain(&s, &[1e-1, 1e-2, 1e-3]);
        assert!(r.verdicts[0].pass && !r.verdicts[1].pass);
    }

    #[test]
    fn zero_locus_shrinks_or_not() {
        let fam = toy(vec![YBound::exact("Y1", |x, _| -(x[0] * x[0] + x[1] * x[1]))], 0);
        let s = YSamples::draw(&fam, None, YSampleOptions::default()).unwrap();
        let r = check_zero_locus(&fam, &s, &[1e-1, 1e-2, 1e-3]);
        assert!(r.pass, "{:?}", r.levels);
        assert!(r.levels[2].radius <= 1e-3f64.sqrt() + 1e-12);

        let line = toy(vec![YBound::exact("Y1", |x, _| -x[1] * x[1])], 0);
        let s = YSamples::draw(&line, None, YSampleOptions::default()).unwrap();
        let r = check_zero_locus(&line, &s, &[1e-1, 1e-2, 1e-3]);
        assert!(!r.pass);
        assert!(r.levels[2].radius > 0.99);
    }

    #[test]
    fn refinement_finds_thin_band_the_grid_misses() {
        // Y₂ = x₁² − 0.37·|x₂| vanishes only on a thin curve off the grid.
        let fam = toy(
            vec![
                YBound::exact("Y1", |x, _| -x[1].powi(6)),
                YBound::exact("Y2", |x, _| x[0] * x[0] - 0.37 * x[1].abs()),
            ],
            0,
        );
        let s = YSamples::draw(&fam, None, YSampleOptions { scattered: 0, ..Default::default() }).unwrap();
        let r = check_zero_locus(&fam, &s, &[1e-3]);
        assert!(r.levels[0].refined > 0);
        let w = r.levels[0].witness.clone().unwrap();
        assert!(fam.y_values(&w, &[]).iter().all(|v| v.abs() <= 1e-3));
        assert!(r.levels[0].radius > 0.4, "{:?}", r.levels);
    }
}
