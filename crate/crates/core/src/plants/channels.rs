use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{GainVector, ModulatedQuadratic, PlantError};
use crate::dynamics::{norm, sample_region, RegionSpec, TimeVaryingSystem};

type VecMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type MatMap = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
type ScalarMap = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// One passive block `ẋᵢ = Bᵢ(xᵢ)uᵢ`, `yᵢ = Bᵢᵀ∇Wᵢ` with storage `Wᵢ`.
#[derive(Clone)]
pub struct Block {
    pub state_dim: usize,
    pub output_dim: usize,
    pub b: MatMap,
    pub w: ScalarMap,
    pub grad_w: VecMap,
    /// Jacobian of the output map `hᵢ = ∇Wᵢ`-based output, `output_dim × state_dim`.
    pub output_jacobian: MatMap,
    pub c: f64,
    /// Lower bound `‖hᵢ(xᵢ)‖ ≥ κᵢ(‖xᵢ‖)`.
    pub kappa: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Block")
            .field("state_dim", &self.state_dim)
            .field("output_dim", &self.output_dim)
            .field("c", &self.c)
            .finish_non_exhaustive()
    }
}

impl Block {
    /// `B = I`, `W = ½a‖x‖²`, so `y = a·x`, `∇h·B = aI`, `‖h‖ = a‖x‖`.
    pub fn scaled_identity(dim: usize, a: f64) -> Self {
        Self {
            state_dim: dim,
            output_dim: dim,
            b: Arc::new(move |_| DMatrix::identity(dim, dim)),
            w: Arc::new(move |x| 0.5 * a * x.iter().map(|v| v * v).sum::<f64>()),
            grad_w: Arc::new(move |x| x.iter().map(|v| a * v).collect()),
            output_jacobian: Arc::new(move |_| DMatrix::identity(dim, dim) * a),
            c: a,
            kappa: Arc::new(move |r| a * r),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        let b = (self.b)(x);
        let g = nalgebra::DVector::from_vec((self.grad_w)(x));
        (b.transpose() * g).as_slice().to_vec()
    }
}

/// Sector nonlinearity of the terminal controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sector {
    Tanh,
    Linear { gain: f64 },
}

impl Default for Sector {
    fn default() -> Self {
        Sector::Tanh
    }
}

impl Sector {
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        match *self {
            Sector::Tanh => u.iter().map(|v| v.tanh()).collect(),
            Sector::Linear { gain } => u.iter().map(|v| gain * v).collect(),
        }
    }

    /// Positive-definite lower bound on `uᵀσ(u)` for `‖u‖ = r` in dimension `p`.
    pub fn rho(&self, r: f64, p: usize) -> f64 {
        match *self {
            Sector::Tanh => {
                // The largest component is at least r/√p, and s·tanh(s) is even and increasing in |s|.
                let s = r / (p.max(1) as f64).sqrt();
                s * s.tanh()
            }
            Sector::Linear { gain } => gain * r * r,
        }
    }
}

/// Bounded additive part `g̃ᵢ,ᵦ(t, x)` of a channel gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelBias {
    Constant { value: f64 },
    Sine { offset: f64, amplitude: f64, freq: f64 },
}

impl ChannelBias {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            ChannelBias::Constant { value } => value,
            ChannelBias::Sine { offset, amplitude, freq } => offset + amplitude * (freq * t).sin(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChannelNetworkConfig {
    pub blocks: Vec<Block>,
    /// `g̃ᵢ,ₐ(t, x)` acting on the stacked block states.
    pub ga: Vec<ModulatedQuadratic>,
    pub gb: Vec<ChannelBias>,
    pub sigma: Sector,
}

/// Borrowed view of a channel-plant state `(x₁ … xₙ, z₁ … z_{n−1})`.
#[derive(Debug, Clone)]
pub struct ChannelState<'a> {
    pub x: &'a [f64],
    pub blocks: Vec<&'a [f64]>,
    pub z: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// `min λ(sym(∇h·B)) − c` over samples; must be ≥ 0.
    pub min_eigen_margin: f64,
    /// Storage lower envelope is positive off the origin and grows.
    pub storage_envelope_ok: bool,
    /// `σ(0) = 0`, `sσ(s) > 0`, `uᵀσ(u) ≥ ρ(‖u‖)` on samples.
    pub sector_ok: bool,
    pub pass: bool,
}

impl ChannelNetworkConfig {
    /// `n` identical identity blocks of dimension `dim`.
    pub fn identity(
        n: usize,
        dim: usize,
        ga: Vec<ModulatedQuadratic>,
        gb: Vec<ChannelBias>,
        sigma: Sector,
    ) -> Self {
        Self {
            blocks: (0..n).map(|_| Block::identity(dim)).collect(),
            ga,
            gb,
            sigma,
        }
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    pub fn x_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.state_dim).sum()
    }

    pub fn state_dim(&self) -> usize {
        self.x_dim() + self.n() - 1
    }

    pub fn output_dim(&self) -> usize {
        self.blocks[0].output_dim
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let n = self.n();
        if n < 2 {
            return Err(PlantError::Invalid(format!("channel network needs n >= 2 blocks, got {n}")));
        }
        if self.ga.len() != n - 1 || self.gb.len() != n - 1 {
            return Err(PlantError::Invalid(format!(
                "expected {} channel gains, got gA={} gB={}",
                n - 1,
                self.ga.len(),
                self.gb.len()
            )));
        }
        let p = self.output_dim();
        for (i, b) in self.blocks.iter().enumerate() {
            if b.output_dim != p {
                return Err(PlantError::Invalid(format!("block {i} has output dimension {} != {p}", b.output_dim)));
            }
            if !(b.c > 0.0) {
                return Err(PlantError::Invalid(format!("block {i} has non-positive c = {}", b.c)));
            }
        }
        Ok(())
    }

    pub fn split<'a>(&self, state: &'a [f64]) -> ChannelState<'a> {
        let xd = self.x_dim();
        let x = &state[..xd];
        let mut blocks = Vec::with_capacity(self.n());
        let mut off = 0;
        for b in &self.blocks {
            blocks.push(&x[off..off + b.state_dim]);
            off += b.state_dim;
        }
        ChannelState {
            x,
            blocks,
            z: &state[xd..],
        }
    }

    /// Block index ranges inside the stacked `x`.
    pub fn block_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut off = 0;
        self.blocks
            .iter()
            .map(|b| {
                let r = off..off + b.state_dim;
                off += b.state_dim;
                r
            })
            .collect()
    }

    pub fn outputs(&self, s: &ChannelState<'_>) -> Vec<Vec<f64>> {
        self.blocks.iter().zip(&s.blocks).map(|(b, x)| b.output(x)).collect()
    }

    /// `g̃ᵢ = −zᵢ + g̃ᵢ,ₐ(t,x) + g̃ᵢ,ᵦ(t,x)` and the tail products.
    pub fn gains(&self, t: f64, s: &ChannelState<'_>) -> GainVector {
        let tilde: Vec<f64> = (0..self.n() - 1)
            .map(|i| -s.z[i] + self.ga[i].value(t, s.x) + self.gb[i].value(t))
            .collect();
        GainVector::from_tilde(&tilde)
    }

    /// Sampled checks of the block and controller invariants.
    pub fn check_invariants(&self, samples: usize, radius: f64, seed: u64) -> Result<InvariantReport, PlantError> {
        self.validate()?;
        let mut min_eigen_margin = f64::INFINITY;
        let mut storage_envelope_ok = true;
        for b in &self.blocks {
            let pts = ball_samples(radius, b.state_dim, samples, seed)?;
            let mut pairs = Vec::with_capacity(pts.len());
            for x in &pts {
                let m = (b.output_jacobian)(x) * (b.b)(x);
                let sym = (&m + m.transpose()) * 0.5;
                let lam = sym.symmetric_eigenvalues().min();
                min_eigen_margin = min_eigen_margin.min(lam - b.c);
                pairs.push((norm(x), (b.w)(x)));
            }
            if (b.w)(&vec![0.0; b.state_dim]).abs() > 1e-12 {
                storage_envelope_ok = false;
            }
            // Lower envelope α(r) = min{W(x) : ‖x‖ ≥ r}: positive for r > 0 and unbounded growth trend.
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut env = f64::INFINITY;
            let mut envelope = vec![0.0; pairs.len()];
            for k in (0..pairs.len()).rev() {
                env = env.min(pairs[k].1);
                envelope[k] = env;
            }
            for (k, (r, _)) in pairs.iter().enumerate() {
                if *r > 1e-9 && !(envelope[k] > 0.0) {
                    storage_envelope_ok = false;
                }
            }
            if let (Some(first), Some(last)) = (
                envelope.iter().zip(&pairs).find(|(_, p)| p.0 > 1e-9).map(|(e, _)| *e),
                envelope.last(),
            ) {
                if !(last > &first) {
                    storage_envelope_ok = false;
                }
            }
        }
        let p = self.output_dim();
        let mut sector_ok = self.sigma.apply(&vec![0.0; p]).iter().all(|v| *v == 0.0);
        let pts = ball_samples(radius, p, samples, seed ^ 0x5eed)?;
        for u in &pts {
            let s = self.sigma.apply(u);
            for (a, b) in u.iter().zip(&s) {
                if *a != 0.0 && !(a * b > 0.0) {
                    sector_ok = false;
                }
            }
            let inner: f64 = u.iter().zip(&s).map(|(a, b)| a * b).sum();
            if inner < self.sigma.rho(norm(u), p) - 1e-12 {
                sector_ok = false;
            }
        }
        let pass = min_eigen_margin >= -1e-12 && storage_envelope_ok && sector_ok;
        Ok(InvariantReport {
            min_eigen_margin,
            storage_envelope_ok,
            sector_ok,
            pass,
        })
    }
}

fn ball_samples(radius: f64, dim: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, PlantError> {
    RegionSpec::ball(radius, dim)
        .and_then(|r| sample_region(&r, count, seed))
        .map_err(|e| PlantError::Invalid(e.to_string()))
}

/// Passive blocks in a line, coupled through scalar channel gains:
///
/// ```text
/// żᵢ = −zᵢ + g̃ᵢ,ₐ(t,x),   ẋᵢ = Bᵢ(xᵢ)uᵢ
/// u₁ = g₁y₂,   uᵢ = gᵢy_{i+1} − g_{i−1}y_{i−1},   uₙ = −σ(yₙ) − g_{n−1}y_{n−1}
/// ```
///
/// so `Σ yᵢᵀuᵢ` telescopes to `−yₙᵀσ(yₙ)` whatever the gains are.
pub fn channel_network_plant(config: ChannelNetworkConfig) -> Result<TimeVaryingSystem, PlantError> {
    config.validate()?;
    let n = config.n();
    let dim = config.state_dim();
    Ok(TimeVaryingSystem::new(dim, format!("channels{n}"), move |t, state| {
        let s = config.split(state);
        let y = config.outputs(&s);
        let g = config.gains(t, &s).g;
        let p = config.output_dim();
        let mut out = Vec::with_capacity(dim);
        for i in 0..n {
            let mut u = vec![0.0; p];
            if i + 1 < n {
                for (k, uk) in u.iter_mut().enumerate() {
                    *uk += g[i] * y[i + 1][k];
                }
            } else {
                for (uk, sk) in u.iter_mut().zip(config.sigma.apply(&y[i])) {
                    *uk -= sk;
                }
            }
            if i > 0 {
                for (k, uk) in u.iter_mut().enumerate() {
                    *uk -= g[i - 1] * y[i - 1][k];
                }
            }
            let b = (config.blocks[i].b)(s.blocks[i]);
            let dx = b * nalgebra::DVector::from_vec(u);
            out.extend_from_slice(dx.as_slice());
        }
        for i in 0..n - 1 {
            out.push(-s.z[i] + config.ga[i].value(t, s.x));
        }
        out
    }))
}
