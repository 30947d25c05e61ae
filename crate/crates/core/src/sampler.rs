//! Markov chain Monte Carlo for the tilted gradient Gibbs measure
//! `∝ exp(−β Σ_x V(∇φ(x) + u))` on zero-sum fields.
//!
//! One sweep is a pass of two-site Metropolis moves (add `δ` at `x`, remove
//! it at a random partner `y`, so the zero sum is kept exactly), optionally
//! followed by a two-site overrelaxation move and a global preconditioned
//! Crank–Nicolson move against an exact Gaussian reference. Step sizes adapt
//! during burn-in and are frozen afterwards; only post-freeze samples are
//! recorded.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::gaussian::{GaussianSampler, GaussianSpec};
use crate::potentials::Potential;
use crate::stats::{batch_means, effective_sample_size, integrated_autocorr_time, MIN_BATCHES};
use crate::torus::TorusSpec;

/// `H(φ) = Σ_x V(∇φ(x) + u)`.
pub fn hamiltonian(phi: &ScalarField, v: &dyn Potential, u: &[f64]) -> Result<f64> {
    if !phi.is_zero_sum() {
        return Err(Error::NotZeroSum(phi.sum()));
    }
    let t = &phi.spec;
    let d = t.d();
    let mut z = vec![0.0; d];
    let mut h = 0.0;
    for x in 0..t.volume() {
        for a in 0..d {
            z[a] = phi.values[t.shift(x, a, 1)] - phi.values[x] + u[a];
        }
        h += v.value(&z);
    }
    Ok(h)
}

/// The same Hamiltonian written as `L^{dN}V(u) + Σ_x (U(∇φ,u) + ½𝒬_V(∇φ))`.
pub fn hamiltonian_rewritten(phi: &ScalarField, v: &dyn Potential, u: &[f64]) -> Result<f64> {
    if !phi.is_zero_sum() {
        return Err(Error::NotZeroSum(phi.sum()));
    }
    let t = &phi.spec;
    let d = t.d();
    let q = v.q_v();
    let mut z = vec![0.0; d];
    let mut h = t.volume() as f64 * v.value(u);
    for x in 0..t.volume() {
        for a in 0..d {
            z[a] = phi.values[t.shift(x, a, 1)] - phi.values[x];
        }
        let mut quad = 0.0;
        for i in 0..d {
            for j in 0..d {
                quad += z[i] * q[(i, j)] * z[j];
            }
        }
        h += crate::potentials::u_function(v, &z, u) + 0.5 * quad;
    }
    Ok(h)
}

/// Metropolis rule: accept when `uniform < exp(−β ΔH)`.
pub fn metropolis_accept(delta_h: f64, beta: f64, uniform: f64) -> bool {
    delta_h <= 0.0 || uniform < (-beta * delta_h).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Total sweeps including burn-in.
    pub sweeps: usize,
    pub burn_in: usize,
    /// Initial half-width of the two-site proposal; `None` uses `1/√β`.
    pub initial_scale: Option<f64>,
    pub target_acceptance: f64,
    pub acceptance_tolerance: f64,
    pub adapt_interval: usize,
    /// Two-site Metropolis moves per site and sweep (0 disables them).
    pub local_moves: bool,
    /// Overrelaxation pass every this many sweeps.
    pub overrelax_every: Option<usize>,
    /// Global move every this many sweeps.
    pub global_every: Option<usize>,
    /// Initial global step `s` in `φ' = √(1−s²) φ + s ξ`.
    pub global_step: f64,
    /// Stiffness of the Gaussian reference; `None` uses `D²V(u)` when it is
    /// positive definite and `Q_V` otherwise.
    pub reference: Option<Vec<Vec<f64>>>,
    pub record_every: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            sweeps: 2000,
            burn_in: 200,
            initial_scale: None,
            target_acceptance: 0.4,
            acceptance_tolerance: 0.1,
            adapt_interval: 20,
            local_moves: true,
            overrelax_every: Some(5),
            global_every: Some(1),
            global_step: 1.0,
            reference: None,
            record_every: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps <= self.burn_in {
            return Err(Error::InvalidParam("sweeps must exceed burn_in".into()));
        }
        if self.record_every == 0 || self.adapt_interval == 0 {
            return Err(Error::InvalidParam("record_every and adapt_interval must be positive".into()));
        }
        if !(self.global_step > 0.0 && self.global_step <= 1.0) {
            return Err(Error::InvalidParam("global_step must lie in (0,1]".into()));
        }
        if let Some(s) = self.initial_scale {
            if s <= 0.0 {
                return Err(Error::InvalidParam("initial_scale must be positive".into()));
            }
        }
        if !self.local_moves && self.global_every.is_none() {
            return Err(Error::InvalidParam("at least one move type must be enabled".into()));
        }
        Ok(())
    }
}

/// Quantities recorded once per retained sweep.
#[derive(Debug, Clone)]
pub enum Observable {
    Energy,
    /// `Σ_x ∂_iV(∇φ(x)+u)`.
    ForceSum(usize),
    /// `Σ_x ∂_i∂_jV(∇φ(x)+u)`.
    CurvatureSum(usize, usize),
    /// `L^{−dN} Σ_x (∇_aφ(x))^p`.
    GradientMoment { axis: usize, power: u32 },
    /// `(w, φ)`.
    Linear { name: String, weights: Vec<f64> },
    /// `Σ_x φ(x)`, for drift monitoring.
    ZeroSum,
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::Energy => "energy".into(),
            Observable::ForceSum(i) => format!("force_sum_{i}"),
            Observable::CurvatureSum(i, j) => format!("curvature_sum_{i}{j}"),
            Observable::GradientMoment { axis, power } => format!("gradient_moment_{axis}_{power}"),
            Observable::Linear { name, .. } => name.clone(),
            Observable::ZeroSum => "zero_sum".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservableSeries {
    pub name: String,
    pub values: Vec<f64>,
    pub batch_means: Vec<f64>,
    pub tau_int: f64,
    pub ess: f64,
}

impl ObservableSeries {
    pub fn from_values(name: String, values: Vec<f64>) -> Self {
        Self {
            name,
            batch_means: batch_means(&values, MIN_BATCHES),
            tau_int: integrated_autocorr_time(&values),
            ess: effective_sample_size(&values),
            values,
        }
    }

    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.values)
    }

    pub fn se(&self) -> f64 {
        crate::stats::batch_means_se(&self.values, MIN_BATCHES)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub local_accepted: u64,
    pub local_proposed: u64,
    pub overrelax_accepted: u64,
    pub overrelax_proposed: u64,
    pub global_accepted: u64,
    pub global_proposed: u64,
}

impl AcceptanceStats {
    fn rate(a: u64, p: u64) -> f64 {
        if p == 0 {
            f64::NAN
        } else {
            a as f64 / p as f64
        }
    }
    pub fn local_rate(&self) -> f64 {
        Self::rate(self.local_accepted, self.local_proposed)
    }
    pub fn overrelax_rate(&self) -> f64 {
        Self::rate(self.overrelax_accepted, self.overrelax_proposed)
    }
    pub fn global_rate(&self) -> f64 {
        Self::rate(self.global_accepted, self.global_proposed)
    }
}

/// Everything needed to resume a chain bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub phi: ScalarField,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub rng_seed: String,
    pub rng_stream: u64,
    /// ChaCha word position, decimal.
    pub rng_word_pos: String,
    pub scale: f64,
    pub global_step: f64,
    pub frozen: bool,
    pub stats: AcceptanceStats,
    /// SHA-256 of the binary field snapshot.
    pub field_sha256: String,
}

impl Checkpoint {
    /// Writes `<name>.bin` (field snapshot) and `<name>.json` (sidecar).
    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let bytes = self.phi.to_bytes();
        let mut meta = self.meta.clone();
        meta.field_sha256 = hex::encode(Sha256::digest(&bytes));
        fs::write(dir.join(format!("{name}.bin")), &bytes)?;
        fs::write(dir.join(format!("{name}.json")), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let bytes = fs::read(dir.join(format!("{name}.bin")))?;
        let meta: CheckpointMeta = serde_json::from_slice(&fs::read(dir.join(format!("{name}.json")))?)
            .map_err(|e| Error::Checkpoint(format!("unreadable sidecar: {e}")))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != meta.field_sha256 {
            return Err(Error::Checkpoint(format!("checksum mismatch: expected {}, found {digest}", meta.field_sha256)));
        }
        let phi = ScalarField::read_from(&mut bytes.as_slice()).map_err(|e| Error::Checkpoint(format!("bad field snapshot: {e}")))?;
        Ok(Self { phi, meta })
    }
}

struct Reference {
    sampler: GaussianSampler,
    stiffness: DMatrix<f64>,
}

pub struct Chain {
    v: Arc<dyn Potential>,
    torus: TorusSpec,
    beta: f64,
    u: Vec<f64>,
    cfg: SamplerConfig,
    phi: Vec<f64>,
    step: u64,
    rng: ChaCha20Rng,
    scale: f64,
    global_step: f64,
    frozen: bool,
    stats: AcceptanceStats,
    window: AcceptanceStats,
    fwd: Vec<Vec<usize>>,
    bwd: Vec<Vec<usize>>,
    reference: Option<Reference>,
    z: Vec<f64>,
}

/// Default reference stiffness: `D²V(u)` if positive definite, else `Q_V`.
pub fn default_reference(v: &dyn Potential, u: &[f64]) -> DMatrix<f64> {
    let h = v.hessian(u);
    let h = (&h + h.transpose()) * 0.5;
    if SymmetricEigen::new(h.clone()).eigenvalues.min() > 0.0 {
        h
    } else {
        v.q_v()
    }
}

impl Chain {
    pub fn new(v: Arc<dyn Potential>, torus: &TorusSpec, beta: f64, u: &[f64], cfg: &SamplerConfig, seed: u64, stream: u64) -> Result<Self> {
        cfg.validate()?;
        let d = torus.d();
        if v.dim() != d || u.len() != d {
            return Err(Error::Mismatch("potential, tilt and torus dimensions differ".into()));
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidParam("beta must be positive".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let reference = match cfg.global_every {
            Some(_) => {
                let stiffness = match &cfg.reference {
                    Some(rows) => {
                        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                            return Err(Error::InvalidParam(format!("reference stiffness must be {d}x{d}")));
                        }
                        DMatrix::from_row_slice(d, d, &rows.iter().flatten().copied().collect::<Vec<_>>())
                    }
                    None => default_reference(v.as_ref(), u),
                };
                let spec = GaussianSpec::new(torus, &stiffness)?;
                Some(Reference { sampler: GaussianSampler::new(&spec, beta), stiffness })
            }
            None => None,
        };
        Ok(Self {
            v,
            torus: torus.clone(),
            beta,
            u: u.to_vec(),
            cfg: cfg.clone(),
            phi: vec![0.0; torus.volume()],
            step: 0,
            rng,
            scale: cfg.initial_scale.unwrap_or(1.0 / beta.sqrt()),
            global_step: cfg.global_step,
            frozen: false,
            stats: AcceptanceStats::default(),
            window: AcceptanceStats::default(),
            fwd: (0..d).map(|a| torus.shift_table(a, 1)).collect(),
            bwd: (0..d).map(|a| torus.shift_table(a, -1)).collect(),
            reference,
            z: vec![0.0; d],
        })
    }

    /// Rebuild a chain from a checkpoint; potential and config come from the
    /// caller and must match the original run.
    pub fn restore(v: Arc<dyn Potential>, beta: f64, u: &[f64], cfg: &SamplerConfig, ck: &Checkpoint) -> Result<Self> {
        let mut c = Self::new(v, &ck.phi.spec, beta, u, cfg, 0, 0)?;
        let seed_bytes = hex::decode(&ck.meta.rng_seed).map_err(|e| Error::Checkpoint(format!("bad rng seed: {e}")))?;
        let seed: [u8; 32] = seed_bytes.try_into().map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let word_pos: u128 = ck.meta.rng_word_pos.parse().map_err(|e| Error::Checkpoint(format!("bad word position: {e}")))?;
        let mut rng = ChaCha20Rng::from_seed(seed);
        rng.set_stream(ck.meta.rng_stream);
        rng.set_word_pos(word_pos);
        c.rng = rng;
        c.phi = ck.phi.values.clone();
        c.step = ck.meta.step;
        c.scale = ck.meta.scale;
        c.global_step = ck.meta.global_step;
        c.frozen = ck.meta.frozen;
        c.stats = ck.meta.stats;
        Ok(c)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            phi: self.field(),
            meta: CheckpointMeta {
                step: self.step,
                rng_seed: hex::encode(self.rng.get_seed()),
                rng_stream: self.rng.get_stream(),
                rng_word_pos: self.rng.get_word_pos().to_string(),
                scale: self.scale,
                global_step: self.global_step,
                frozen: self.frozen,
                stats: self.stats,
                field_sha256: hex::encode(Sha256::digest(self.field().to_bytes())),
            },
        }
    }

    pub fn field(&self) -> ScalarField {
        ScalarField { spec: self.torus.clone(), values: self.phi.clone() }
    }
    pub fn step(&self) -> u64 {
        self.step
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }
    pub fn global_step(&self) -> f64 {
        self.global_step
    }
    pub fn stats(&self) -> AcceptanceStats {
        self.stats
    }
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    #[inline]
    fn site_energy(&mut self, s: usize) -> f64 {
        for a in 0..self.torus.d() {
            self.z[a] = self.phi[self.fwd[a][s]] - self.phi[s] + self.u[a];
        }
        self.v.value(&self.z)
    }

    /// Gradient sites whose value changes when `φ(x)` and `φ(y)` move.
    fn affected(&self, x: usize, y: usize, out: &mut Vec<usize>) {
        out.clear();
        for &s in &[x, y] {
            if !out.contains(&s) {
                out.push(s);
            }
            for a in 0..self.torus.d() {
                let b = self.bwd[a][s];
                if !out.contains(&b) {
                    out.push(b);
                }
            }
        }
    }

    fn partner(&mut self, x: usize) -> usize {
        let n = self.torus.volume();
        let r = self.rng.random_range(0..n - 1);
        if r >= x {
            r + 1
        } else {
            r
        }
    }

    fn pair_energy(&mut self, set: &[usize]) -> f64 {
        let mut e = 0.0;
        for &s in set {
            e += self.site_energy(s);
        }
        e
    }

    fn metropolis_sweep(&mut self, set: &mut Vec<usize>) {
        for x in 0..self.torus.volume() {
            let y = self.partner(x);
            let delta = self.scale * (2.0 * self.rng.random::<f64>() - 1.0);
            self.affected(x, y, set);
            let old = self.pair_energy(set);
            self.phi[x] += delta;
            self.phi[y] -= delta;
            let new = self.pair_energy(set);
            let u: f64 = self.rng.random();
            self.window.local_proposed += 1;
            if metropolis_accept(new - old, self.beta, u) {
                self.window.local_accepted += 1;
            } else {
                self.phi[x] -= delta;
                self.phi[y] += delta;
            }
        }
    }

    /// Reflection along `e_x − e_y` through the minimum of the reference
    /// quadratic energy restricted to that line; an involution, so a plain
    /// Metropolis test keeps detailed balance.
    fn overrelax_sweep(&mut self, set: &mut Vec<usize>) {
        let d = self.torus.d();
        let q = match &self.reference {
            Some(r) => r.stiffness.clone(),
            None => self.v.q_v(),
        };
        let mut g = vec![0.0; d];
        let mut e = vec![0.0; d];
        for x in 0..self.torus.volume() {
            let y = self.partner(x);
            self.affected(x, y, set);
            let (mut num, mut den) = (0.0, 0.0);
            for &s in set.iter() {
                for a in 0..d {
                    let f = self.fwd[a][s];
                    g[a] = self.phi[f] - self.phi[s];
                    let ind = |site: usize| (site == x) as i32 as f64 - (site == y) as i32 as f64;
                    e[a] = ind(f) - ind(s);
                }
                for i in 0..d {
                    for j in 0..d {
                        num += e[i] * q[(i, j)] * g[j];
                        den += e[i] * q[(i, j)] * e[j];
                    }
                }
            }
            if den <= 0.0 {
                continue;
            }
            let shift = -2.0 * num / den;
            let old = self.pair_energy(set);
            self.phi[x] += shift;
            self.phi[y] -= shift;
            let new = self.pair_energy(set);
            let u: f64 = self.rng.random();
            self.window.overrelax_proposed += 1;
            if metropolis_accept(new - old, self.beta, u) {
                self.window.overrelax_accepted += 1;
            } else {
                self.phi[x] -= shift;
                self.phi[y] += shift;
            }
        }
    }

    /// `Φ(φ) = β(H(φ) − ½ Σ_x ⟨∇φ, Q_ref ∇φ⟩)`.
    fn potential_part(&mut self, phi: &[f64]) -> f64 {
        let d = self.torus.d();
        let q = self.reference.as_ref().expect("reference present").stiffness.clone();
        let mut total = 0.0;
        let mut g = vec![0.0; d];
        for s in 0..self.torus.volume() {
            for a in 0..d {
                g[a] = phi[self.fwd[a][s]] - phi[s];
                self.z[a] = g[a] + self.u[a];
            }
            let mut quad = 0.0;
            for i in 0..d {
                for j in 0..d {
                    quad += g[i] * q[(i, j)] * g[j];
                }
            }
            total += self.v.value(&self.z) - 0.5 * quad;
        }
        self.beta * total
    }

    fn global_move(&mut self) {
        let (xi, _) = self.reference.as_ref().expect("reference present").sampler.sample_pair(&mut self.rng);
        let s = self.global_step;
        let rho = (1.0 - s * s).max(0.0).sqrt();
        let proposal: Vec<f64> = self.phi.iter().zip(&xi).map(|(p, x)| rho * p + s * x).collect();
        let cur = self.phi.clone();
        let old = self.potential_part(&cur);
        let new = self.potential_part(&proposal);
        let u: f64 = self.rng.random();
        self.window.global_proposed += 1;
        if metropolis_accept(new - old, 1.0, u) {
            self.window.global_accepted += 1;
            self.phi = proposal;
        }
    }

    fn adapt(&mut self) {
        let w = self.window;
        if w.local_proposed > 0 {
            let rate = w.local_accepted as f64 / w.local_proposed as f64;
            if (rate - self.cfg.target_acceptance).abs() > 0.25 * self.cfg.acceptance_tolerance {
                self.scale *= (2.0 * (rate - self.cfg.target_acceptance)).exp();
            }
        }
        if w.global_proposed > 0 {
            let rate = w.global_accepted as f64 / w.global_proposed as f64;
            if rate < self.cfg.target_acceptance - self.cfg.acceptance_tolerance {
                self.global_step *= 0.7;
            } else if rate > self.cfg.target_acceptance + self.cfg.acceptance_tolerance {
                self.global_step = (self.global_step * 1.3).min(1.0);
            }
        }
    }

    fn merge_window(&mut self) {
        let w = std::mem::take(&mut self.window);
        self.stats.local_accepted += w.local_accepted;
        self.stats.local_proposed += w.local_proposed;
        self.stats.overrelax_accepted += w.overrelax_accepted;
        self.stats.overrelax_proposed += w.overrelax_proposed;
        self.stats.global_accepted += w.global_accepted;
        self.stats.global_proposed += w.global_proposed;
    }

    /// One sweep; adapts step sizes while `step < burn_in`.
    pub fn sweep(&mut self) {
        let mut set = Vec::with_capacity(2 * (self.torus.d() + 1));
        let n = self.step + 1;
        if self.cfg.local_moves {
            self.metropolis_sweep(&mut set);
        }
        if let Some(k) = self.cfg.overrelax_every {
            if k > 0 && n % k as u64 == 0 {
                self.overrelax_sweep(&mut set);
            }
        }
        if let Some(k) = self.cfg.global_every {
            if k > 0 && n % k as u64 == 0 {
                self.global_move();
            }
        }
        self.step = n;
        if !self.frozen {
            if n % self.cfg.adapt_interval as u64 == 0 {
                self.adapt();
                self.window = AcceptanceStats::default();
            }
            if n >= self.cfg.burn_in as u64 {
                self.frozen = true;
                self.window = AcceptanceStats::default();
                self.stats = AcceptanceStats::default();
            }
        } else {
            self.merge_window();
        }
    }

    /// Evaluate observables on the current field.
    pub fn measure(&mut self, obs: &[Observable]) -> Vec<f64> {
        let d = self.torus.d();
        let need_deriv = obs.iter().any(|o| matches!(o, Observable::ForceSum(_) | Observable::CurvatureSum(..)));
        let mut force = vec![0.0; d];
        let mut curv = vec![0.0; d * d];
        let mut energy = None;
        if need_deriv || obs.iter().any(|o| matches!(o, Observable::Energy)) {
            let mut g = vec![0.0; d];
            let mut h = vec![0.0; d * d];
            let mut e = 0.0;
            for s in 0..self.torus.volume() {
                for a in 0..d {
                    self.z[a] = self.phi[self.fwd[a][s]] - self.phi[s] + self.u[a];
                }
                e += self.v.value(&self.z);
                if need_deriv {
                    self.v.grad_hess(&self.z, &mut g, &mut h);
                    for a in 0..d {
                        force[a] += g[a];
                    }
                    for (c, hv) in curv.iter_mut().zip(&h) {
                        *c += hv;
                    }
                }
            }
            energy = Some(e);
        }
        let vol = self.torus.volume() as f64;
        obs.iter()
            .map(|o| match o {
                Observable::Energy => energy.unwrap_or(0.0),
                Observable::ForceSum(i) => force[*i],
                Observable::CurvatureSum(i, j) => curv[i * d + j],
                Observable::GradientMoment { axis, power } => {
                    (0..self.torus.volume()).map(|s| (self.phi[self.fwd[*axis][s]] - self.phi[s]).powi(*power as i32)).sum::<f64>() / vol
                }
                Observable::Linear { weights, .. } => crate::torus::dot(weights, &self.phi),
                Observable::ZeroSum => self.phi.iter().sum(),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ChainRun {
    pub series: Vec<ObservableSeries>,
    pub checkpoint: Checkpoint,
    pub acceptance: AcceptanceStats,
    pub final_scale: f64,
    pub final_global_step: f64,
}

impl ChainRun {
    pub fn get(&self, name: &str) -> Option<&ObservableSeries> {
        self.series.iter().find(|s| s.name == name)
    }
}

/// Run one chain from `φ = 0` for `cfg.sweeps` sweeps, recording after
/// burn-in.
#[allow(clippy::too_many_arguments)]
pub fn run_chain(v: Arc<dyn Potential>, torus: &TorusSpec, beta: f64, u: &[f64], cfg: &SamplerConfig, obs: &[Observable], seed: u64, stream: u64) -> Result<ChainRun> {
    let chain = Chain::new(v, torus, beta, u, cfg, seed, stream)?;
    continue_chain(chain, cfg, obs)
}

/// Run a (possibly restored) chain until it has done `cfg.sweeps` sweeps.
pub fn continue_chain(mut chain: Chain, cfg: &SamplerConfig, obs: &[Observable]) -> Result<ChainRun> {
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); obs.len()];
    while chain.step < cfg.sweeps as u64 {
        chain.sweep();
        if chain.frozen && chain.step > cfg.burn_in as u64 && (chain.step - cfg.burn_in as u64) % cfg.record_every as u64 == 0 {
            for (vals, m) in values.iter_mut().zip(chain.measure(obs)) {
                vals.push(m);
            }
        }
    }
    if chain.phi.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("chain produced non-finite field values".into()));
    }
    let series = obs.iter().zip(values).map(|(o, v)| ObservableSeries::from_values(o.name(), v)).collect();
    Ok(ChainRun { series, checkpoint: chain.checkpoint(), acceptance: chain.stats, final_scale: chain.scale, final_global_step: chain.global_step })
}

/// Independent chains on streams `0..n_chains` of the same seed, run in
/// parallel and returned in stream order.
#[allow(clippy::too_many_arguments)]
pub fn run_chains(v: Arc<dyn Potential>, torus: &TorusSpec, beta: f64, u: &[f64], cfg: &SamplerConfig, obs: &[Observable], seed: u64, n_chains: usize) -> Result<Vec<ChainRun>> {
    (0..n_chains as u64).into_par_iter().map(|s| run_chain(v.clone(), torus, beta, u, cfg, obs, seed, s)).collect()
}
