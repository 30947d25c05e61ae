//! Interaction potentials `V: R^d → R`, the perturbation functions `U` and
//! `𝒦`, assumption checks on a grid, and the ζ-weighted derivative norm.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{series, Jet};
use crate::torus::MultiIndex;

/// Highest derivative order any caller needs (`r₀ + r₁`).
pub const MAX_DERIVATIVE_ORDER: usize = 6;
/// Derivative order in the ζ-norm.
pub const ZETA_NORM_ORDER: usize = 3;

pub trait Potential: Send + Sync + Debug {
    fn kind(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn value(&self, z: &[f64]) -> f64;
    /// Taylor jet of `V` at `z` up to `order` (at most 6).
    fn jet(&self, z: &[f64], order: usize) -> Jet;
    fn params(&self) -> serde_json::Value;

    /// Gradient into `g` and row-major Hessian into `h`.
    fn grad_hess(&self, z: &[f64], g: &mut [f64], h: &mut [f64]) {
        let d = self.dim();
        let j = self.jet(z, 2);
        for i in 0..d {
            g[i] = j.derivative(&MultiIndex::unit(d, i));
            for k in 0..d {
                h[i * d + k] = j.derivative(&MultiIndex::unit(d, i).add(&MultiIndex::unit(d, k)));
            }
        }
    }

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        self.grad_hess(z, &mut g, &mut h);
        g
    }

    fn hessian(&self, z: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        self.grad_hess(z, &mut g, &mut h);
        DMatrix::from_row_slice(d, d, &h)
    }

    /// First-order Taylor remainder `V(z+u) − V(u) − DV(u)z`; builtins with
    /// a closed form override this to avoid cancellation at large `|u|`.
    fn taylor_remainder(&self, z: &[f64], u: &[f64]) -> f64 {
        let zu: Vec<f64> = z.iter().zip(u).map(|(a, b)| a + b).collect();
        self.value(&zu) - self.value(u) - dot(&self.gradient(u), z)
    }

    /// `Q_V = D²V(0)`.
    fn q_v(&self) -> DMatrix<f64> {
        let h = self.hessian(&vec![0.0; self.dim()]);
        (&h + h.transpose()) * 0.5
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `V(z) = ½⟨z, Mz⟩`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    m: DMatrix<f64>,
}

impl Quadratic {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || (&m - m.transpose()).abs().max() > 1e-12 {
            return Err(Error::InvalidParam("quadratic potential needs a symmetric matrix".into()));
        }
        Ok(Self { m })
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }
}

impl Potential for Quadratic {
    fn kind(&self) -> &'static str {
        "quadratic"
    }
    fn dim(&self) -> usize {
        self.m.nrows()
    }
    fn value(&self, z: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += z[i] * self.m[(i, j)] * z[j];
            }
        }
        0.5 * s
    }
    fn jet(&self, z: &[f64], order: usize) -> Jet {
        let d = self.dim();
        let mut out = Jet::constant(d, order, 0.0);
        for i in 0..d {
            for j in 0..d {
                let xi = Jet::variable(d, order, i, z[i]);
                let xj = Jet::variable(d, order, j, z[j]);
                out = out.add(&xi.mul(&xj).scale(0.5 * self.m[(i, j)]));
            }
        }
        out
    }
    fn grad_hess(&self, z: &[f64], g: &mut [f64], h: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            g[i] = (0..d).map(|j| self.m[(i, j)] * z[j]).sum();
            for j in 0..d {
                h[i * d + j] = self.m[(i, j)];
            }
        }
    }
    fn taylor_remainder(&self, z: &[f64], _u: &[f64]) -> f64 {
        self.value(z)
    }
    fn params(&self) -> serde_json::Value {
        let rows: Vec<Vec<f64>> = (0..self.dim()).map(|i| self.m.row(i).iter().copied().collect()).collect();
        serde_json::json!({ "m": rows })
    }
}

/// `V(z) = ½|z|² + a(1 − cos⟨b, z⟩)`.
#[derive(Debug, Clone)]
pub struct CosinePerturbed {
    a: f64,
    b: Vec<f64>,
}

impl CosinePerturbed {
    pub fn new(a: f64, b: Vec<f64>) -> Result<Self> {
        if !a.is_finite() || b.is_empty() || b.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParam("cosine potential needs finite a and a nonempty b".into()));
        }
        Ok(Self { a, b })
    }
}

impl Potential for CosinePerturbed {
    fn kind(&self) -> &'static str {
        "cosine_perturbed"
    }
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&self, z: &[f64]) -> f64 {
        0.5 * dot(z, z) + self.a * (1.0 - dot(&self.b, z).cos())
    }
    fn jet(&self, z: &[f64], order: usize) -> Jet {
        let d = self.dim();
        let mut sq = Jet::constant(d, order, 0.0);
        for i in 0..d {
            let x = Jet::variable(d, order, i, z[i]);
            sq = sq.add(&x.mul(&x));
        }
        let phase = Jet::affine(d, order, dot(&self.b, z), &self.b);
        sq.scale(0.5).add_const(self.a).sub(&phase.cos().scale(self.a))
    }
    fn grad_hess(&self, z: &[f64], g: &mut [f64], h: &mut [f64]) {
        let d = self.dim();
        let (s, c) = dot(&self.b, z).sin_cos();
        for i in 0..d {
            g[i] = z[i] + self.a * s * self.b[i];
            for j in 0..d {
                h[i * d + j] = if i == j { 1.0 } else { 0.0 } + self.a * c * self.b[i] * self.b[j];
            }
        }
    }
    fn taylor_remainder(&self, z: &[f64], u: &[f64]) -> f64 {
        let (bu, bz) = (dot(&self.b, u), dot(&self.b, z));
        0.5 * dot(z, z) + self.a * (bu.cos() - (bu + bz).cos() - bu.sin() * bz)
    }
    fn params(&self) -> serde_json::Value {
        serde_json::json!({ "a": self.a, "b": self.b })
    }
}

/// `V(z) = −log(p e^{−κ₁|z|²/2} + (1−p) e^{−κ₂|z|²/2})`.
#[derive(Debug, Clone)]
pub struct GaussianMixtureLog {
    d: usize,
    p: f64,
    k1: f64,
    k2: f64,
}

impl GaussianMixtureLog {
    pub fn new(d: usize, p: f64, k1: f64, k2: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParam(format!("mixture weight p must lie in (0,1), got {p}")));
        }
        if !(k1 > 0.0 && k2 > 0.0) {
            return Err(Error::InvalidParam("mixture stiffnesses must be positive".into()));
        }
        Ok(Self { d, p, k1, k2 })
    }

    /// Stiffer and softer component ordered as (soft weight, soft κ, stiff
    /// weight, stiff κ) so the exponential factor stays bounded.
    fn ordered(&self) -> (f64, f64, f64, f64) {
        if self.k1 <= self.k2 {
            (self.p, self.k1, 1.0 - self.p, self.k2)
        } else {
            (1.0 - self.p, self.k2, self.p, self.k1)
        }
    }

    /// Taylor coefficients of `F(r) = V` as a function of `r = |z|²`.
    fn radial_taylor(&self, r: f64, order: usize) -> Vec<f64> {
        let (ws, ks, wo, ko) = self.ordered();
        let delta = ko - ks;
        // F(r) = κ_s r/2 − log(w_s + w_o e^{−Δr/2})
        let mut g = series::scaled_exp(wo * (-0.5 * delta * r).exp(), -0.5 * delta, order + 1);
        g[0] += ws;
        let mut f: Vec<f64> = series::log(&g).into_iter().map(|c| -c).collect();
        f[0] += 0.5 * ks * r;
        if order >= 1 {
            f[1] += 0.5 * ks;
        }
        f
    }
}

impl Potential for GaussianMixtureLog {
    fn kind(&self) -> &'static str {
        "gaussian_mixture_log"
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, z: &[f64]) -> f64 {
        let r = dot(z, z);
        let (ws, ks, wo, ko) = self.ordered();
        0.5 * ks * r - (ws + wo * (-0.5 * (ko - ks) * r).exp()).ln()
    }
    fn jet(&self, z: &[f64], order: usize) -> Jet {
        let d = self.d;
        let mut r = Jet::constant(d, order, 0.0);
        for i in 0..d {
            let x = Jet::variable(d, order, i, z[i]);
            r = r.add(&x.mul(&x));
        }
        r.compose(&self.radial_taylor(r.value(), order))
    }
    fn grad_hess(&self, z: &[f64], g: &mut [f64], h: &mut [f64]) {
        let d = self.d;
        let f = self.radial_taylor(dot(z, z), 2);
        let (f1, f2) = (f[1], 2.0 * f[2]);
        for i in 0..d {
            g[i] = 2.0 * f1 * z[i];
            for j in 0..d {
                h[i * d + j] = if i == j { 2.0 * f1 } else { 0.0 } + 4.0 * f2 * z[i] * z[j];
            }
        }
    }
    fn params(&self) -> serde_json::Value {
        serde_json::json!({ "p": self.p, "kappa1": self.k1, "kappa2": self.k2 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyTerm {
    pub powers: Vec<u32>,
    pub coeff: f64,
}

/// A polynomial potential made of even-degree monomials, the config-file
/// form of a user-supplied potential.
#[derive(Debug, Clone)]
pub struct EvenPolynomial {
    d: usize,
    terms: Vec<PolyTerm>,
}

impl EvenPolynomial {
    pub fn new(d: usize, terms: Vec<PolyTerm>) -> Result<Self> {
        for t in &terms {
            if t.powers.len() != d {
                return Err(Error::InvalidParam(format!("monomial {:?} does not have {d} exponents", t.powers)));
            }
            let deg: u32 = t.powers.iter().sum();
            if deg % 2 == 1 {
                return Err(Error::InvalidParam(format!("monomial {:?} has odd degree; V must be even", t.powers)));
            }
            if deg as usize > 2 * MAX_DERIVATIVE_ORDER {
                return Err(Error::InvalidParam(format!("monomial {:?} has degree above 12", t.powers)));
            }
        }
        Ok(Self { d, terms })
    }
}

impl Potential for EvenPolynomial {
    fn kind(&self) -> &'static str {
        "custom"
    }
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.coeff * t.powers.iter().zip(z).map(|(&p, &x)| x.powi(p as i32)).product::<f64>()).sum()
    }
    fn jet(&self, z: &[f64], order: usize) -> Jet {
        let d = self.d;
        let vars: Vec<Jet> = (0..d).map(|i| Jet::variable(d, order, i, z[i])).collect();
        let mut out = Jet::constant(d, order, 0.0);
        for t in &self.terms {
            let mut m = Jet::constant(d, order, t.coeff);
            for (i, &p) in t.powers.iter().enumerate() {
                for _ in 0..p {
                    m = m.mul(&vars[i]);
                }
            }
            out = out.add(&m);
        }
        out
    }
    fn params(&self) -> serde_json::Value {
        serde_json::json!({ "terms": self.terms })
    }
}

/// Potential description as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    Quadratic { m: Vec<Vec<f64>> },
    CosinePerturbed { a: f64, b: Vec<f64> },
    GaussianMixtureLog { p: f64, kappa1: f64, kappa2: f64 },
    Custom { terms: Vec<PolyTerm> },
}

pub fn builtin_potential(cfg: &PotentialConfig, d: usize) -> Result<Arc<dyn Potential>> {
    Ok(match cfg {
        PotentialConfig::Quadratic { m } => {
            if m.len() != d || m.iter().any(|r| r.len() != d) {
                return Err(Error::InvalidParam(format!("quadratic matrix must be {d}x{d}")));
            }
            let flat: Vec<f64> = m.iter().flatten().copied().collect();
            Arc::new(Quadratic::new(DMatrix::from_row_slice(d, d, &flat))?)
        }
        PotentialConfig::CosinePerturbed { a, b } => {
            if b.len() != d {
                return Err(Error::InvalidParam(format!("cosine direction b must have {d} entries")));
            }
            Arc::new(CosinePerturbed::new(*a, b.clone())?)
        }
        PotentialConfig::GaussianMixtureLog { p, kappa1, kappa2 } => Arc::new(GaussianMixtureLog::new(d, *p, *kappa1, *kappa2)?),
        PotentialConfig::Custom { terms } => Arc::new(EvenPolynomial::new(d, terms.clone())?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub beta: f64,
    pub u: Vec<f64>,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    #[serde(default = "default_omega0")]
    pub omega0: f64,
    #[serde(default = "default_omega")]
    pub omega: f64,
}

fn default_zeta() -> f64 {
    0.5
}
fn default_omega0() -> f64 {
    0.5
}
fn default_omega() -> f64 {
    0.05
}

impl ModelParams {
    pub fn new(beta: f64, u: Vec<f64>) -> Self {
        Self { beta, u, zeta: default_zeta(), omega0: default_omega0(), omega: default_omega() }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParam(format!("beta must be positive, got {}", self.beta)));
        }
        if self.u.len() != d {
            return Err(Error::InvalidParam(format!("tilt has {} entries, expected {d}", self.u.len())));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::InvalidParam("zeta must lie in (0,1)".into()));
        }
        if !(self.omega0 > 0.0 && self.omega0 < 1.0) {
            return Err(Error::InvalidParam("omega0 must lie in (0,1)".into()));
        }
        if !(self.omega > 0.0 && self.omega < self.omega0 / 8.0) {
            return Err(Error::InvalidParam("omega must lie in (0, omega0/8)".into()));
        }
        Ok(())
    }
}

/// `U(z,u) = V(z+u) − V(u) − DV(u)z − ½D²V(0)(z,z)`.
pub fn u_function(v: &dyn Potential, z: &[f64], u: &[f64]) -> f64 {
    let d = v.dim();
    let q = v.q_v();
    let mut quad = 0.0;
    for i in 0..d {
        for j in 0..d {
            quad += z[i] * q[(i, j)] * z[j];
        }
    }
    v.taylor_remainder(z, u) - 0.5 * quad
}

/// Jet of `h ↦ U(z + h, u)`.
pub fn u_jet(v: &dyn Potential, z: &[f64], u: &[f64], order: usize) -> Jet {
    let d = v.dim();
    let zu: Vec<f64> = z.iter().zip(u).map(|(a, b)| a + b).collect();
    let g = v.gradient(u);
    let q = v.q_v();
    let vars: Vec<Jet> = (0..d).map(|i| Jet::variable(d, order, i, z[i])).collect();
    let mut quad = Jet::constant(d, order, 0.0);
    for i in 0..d {
        for j in 0..d {
            quad = quad.add(&vars[i].mul(&vars[j]).scale(0.5 * q[(i, j)]));
        }
    }
    let lin = Jet::affine(d, order, dot(&g, z), &g);
    v.jet(&zu, order).add_const(-v.value(u)).sub(&lin).sub(&quad)
}

/// `𝒦_{u,β,V}(z) = exp(−βU(β^{−1/2}z, u)) − 1`.
pub fn k_function(v: &dyn Potential, params: &ModelParams, z: &[f64]) -> f64 {
    let s = params.beta.sqrt().recip();
    let w: Vec<f64> = z.iter().map(|x| x * s).collect();
    (-params.beta * u_function(v, &w, &params.u)).exp_m1()
}

/// Jet of `h ↦ 𝒦(z + h)`.
pub fn k_jet(v: &dyn Potential, params: &ModelParams, z: &[f64], order: usize) -> Jet {
    let s = params.beta.sqrt().recip();
    let w: Vec<f64> = z.iter().map(|x| x * s).collect();
    let g = u_jet(v, &w, &params.u, order).rescaled(s).scale(-params.beta);
    let mut e = g.exp();
    e.coeffs[0] = g.value().exp_m1();
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub radius: f64,
    pub points_per_axis: usize,
}

impl GridSpec {
    /// Radius `10·max(1,|u|)`, 101 points per axis for `d ≤ 2`, 21 for `d ≥ 3`.
    pub fn default_for(d: usize, u: &[f64]) -> Self {
        let un = dot(u, u).sqrt();
        Self { radius: 10.0 * un.max(1.0), points_per_axis: if d <= 2 { 101 } else { 21 } }
    }

    pub fn points(&self, d: usize) -> Vec<Vec<f64>> {
        let n = self.points_per_axis.max(2);
        let axis: Vec<f64> = (0..n).map(|k| -self.radius + 2.0 * self.radius * k as f64 / (n - 1) as f64).collect();
        let mut out = vec![Vec::new()];
        for _ in 0..d {
            let mut next = Vec::with_capacity(out.len() * n);
            for p in &out {
                for &x in &axis {
                    let mut q = p.clone();
                    q.push(x);
                    next.push(q);
                }
            }
            out = next;
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub witness: Option<Vec<f64>>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    /// `t^{-2} log sup_{|z|≤t} Σ_{3≤|α|≤6} |∇^αV|/α!` for `t = 5, 10, 20`;
    /// `None` when the sum vanishes identically.
    pub growth_sequence: Vec<(f64, Option<f64>)>,
}

impl AssumptionReport {
    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn eig_bounds(m: &DMatrix<f64>) -> (f64, f64) {
    let e = SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues;
    (e.min(), e.max())
}

/// Grid checks of the small-tilt assumptions (quadratic-form bounds,
/// quadratic lower bound, derivative growth) and of the strictly convex
/// alternative (uniform Hessian bounds).
pub fn check_assumptions(v: &dyn Potential, params: &ModelParams, grid: &GridSpec) -> AssumptionReport {
    let d = v.dim();
    let pts = grid.points(d);
    let zero = vec![0.0; d];
    let mut checks = Vec::new();

    checks.push(AssumptionCheck {
        name: "smoothness".into(),
        passed: true,
        witness: None,
        detail: "assumed: derivatives up to order 6 are supplied analytically".into(),
    });

    let q = v.q_v();
    let (qmin, qmax) = eig_bounds(&q);
    let w0 = params.omega0;
    checks.push(AssumptionCheck {
        name: "quadratic_form_bounds".into(),
        passed: qmin >= w0 && qmax <= 1.0 / w0,
        witness: None,
        detail: format!("spectrum of Q_V in [{qmin}, {qmax}], required within [{w0}, {}]", 1.0 / w0),
    });

    let v0 = v.value(&zero);
    let g0 = v.gradient(&zero);
    let mut worst = f64::INFINITY;
    let mut worst_z = zero.clone();
    for z in &pts {
        let r2 = dot(z, z);
        if r2 == 0.0 {
            continue;
        }
        let slack = v.value(z) - dot(&g0, z) - v0 - params.omega * r2;
        if slack < worst {
            worst = slack;
            worst_z = z.clone();
        }
    }
    checks.push(AssumptionCheck {
        name: "quadratic_lower_bound".into(),
        passed: worst >= -1e-12,
        witness: (worst < -1e-12).then(|| worst_z.clone()),
        detail: format!("min over grid of V(z) - DV(0)z - V(0) - omega|z|^2 = {worst}"),
    });

    let mut growth = Vec::new();
    for &t in &[5.0f64, 10.0, 20.0] {
        let sub = GridSpec { radius: t, points_per_axis: if d <= 2 { 41 } else { 11 } };
        let mut sup = 0.0f64;
        for z in sub.points(d) {
            if dot(&z, &z) > t * t {
                continue;
            }
            let j = v.jet(&z, MAX_DERIVATIVE_ORDER);
            let s: f64 = j.terms().filter(|(a, _)| a.order() >= 3).map(|(_, c)| c.abs()).sum();
            sup = sup.max(s);
        }
        growth.push((t, (sup > 0.0).then(|| sup.ln() / (t * t))));
    }
    let decays = match (growth[0].1, growth[2].1) {
        (Some(a), Some(b)) => b.abs() <= a.abs() + 1e-12,
        _ => true,
    };
    checks.push(AssumptionCheck {
        name: "derivative_growth".into(),
        passed: decays,
        witness: None,
        detail: "empirical: log-sup/t^2 sequence is non-increasing in magnitude; the limit itself is not certified".into(),
    });

    let mut cmin = f64::INFINITY;
    let mut cmax = f64::NEG_INFINITY;
    let mut cz = zero.clone();
    for z in &pts {
        let (lo, hi) = eig_bounds(&v.hessian(z));
        if lo < cmin {
            cmin = lo;
            cz = z.clone();
        }
        cmax = cmax.max(hi);
    }
    checks.push(AssumptionCheck {
        name: "uniform_convexity".into(),
        passed: cmin > 0.0,
        witness: (cmin <= 0.0).then_some(cz),
        detail: format!("Hessian spectrum over grid within [{cmin}, {cmax}]"),
    });

    AssumptionReport { checks, growth_sequence: growth }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZetaNormEstimate {
    pub value: f64,
    pub argmax: Vec<f64>,
}

/// Grid supremum of `Σ_{|α|≤3} |∂^α𝒦(z)|/α! · e^{−½(1−ζ)𝒬_V(z)}`. The
/// closure must return a jet of order at least 3.
pub fn zeta_norm_estimate(k: &dyn Fn(&[f64]) -> Jet, zeta: f64, q_v: &DMatrix<f64>, grid: &GridSpec) -> ZetaNormEstimate {
    let d = q_v.nrows();
    let mut best = ZetaNormEstimate { value: 0.0, argmax: vec![0.0; d] };
    for z in grid.points(d) {
        let j = k(&z);
        let s: f64 = j.terms().filter(|(a, _)| a.order() <= ZETA_NORM_ORDER).map(|(_, c)| c.abs()).sum();
        let mut qz = 0.0;
        for i in 0..d {
            for l in 0..d {
                qz += z[i] * q_v[(i, l)] * z[l];
            }
        }
        let val = s * (-0.5 * (1.0 - zeta) * qz).exp();
        if val > best.value {
            best = ZetaNormEstimate { value: val, argmax: z };
        }
    }
    best
}

/// ζ-norm of `𝒦_{u,β,V}` on a grid.
pub fn k_zeta_norm(v: &dyn Potential, params: &ModelParams, grid: &GridSpec) -> ZetaNormEstimate {
    let f = |z: &[f64]| k_jet(v, params, z, ZETA_NORM_ORDER);
    zeta_norm_estimate(&f, params.zeta, &v.q_v(), grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cosine(a: f64) -> CosinePerturbed {
        CosinePerturbed::new(a, vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn cosine_hessian_at_origin() {
        let v = cosine(2.0);
        let q = v.q_v();
        assert!((q[(0, 0)] - 3.0).abs() < 1e-14 && (q[(1, 1)] - 1.0).abs() < 1e-14 && q[(0, 1)].abs() < 1e-14);
        assert!(v.hessian(&[PI, 0.0])[(0, 0)] < 0.0);
    }

    #[test]
    fn mixture_hessian_at_origin() {
        let v = GaussianMixtureLog::new(2, 0.5, 1.0, 4.0).unwrap();
        let q = v.q_v();
        assert!((q[(0, 0)] - 2.5).abs() < 1e-12 && (q[(1, 1)] - 2.5).abs() < 1e-12 && q[(0, 1)].abs() < 1e-12);
        assert!(GaussianMixtureLog::new(2, 1.0, 1.0, 4.0).is_err());
    }

    #[test]
    fn u_function_cosine_example() {
        let v = CosinePerturbed::new(1.0, vec![1.0, 0.0]).unwrap();
        let u = u_function(&v, &[PI, 0.0], &[0.0, 0.0]);
        assert!((u - (2.0 - PI * PI / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn k_function_composes_with_u() {
        let v = cosine(0.3);
        let p = ModelParams::new(100.0, vec![0.0, 0.0]);
        let expect = (-100.0 * u_function(&v, &[0.1, 0.0], &[0.0, 0.0])).exp() - 1.0;
        assert!((k_function(&v, &p, &[1.0, 0.0]) - expect).abs() < 1e-15);
        assert_eq!(k_function(&v, &p, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn quadratic_assumptions_pass() {
        let v = Quadratic::new(DMatrix::identity(2, 2)).unwrap();
        let mut p = ModelParams::new(1.0, vec![0.0, 0.0]);
        p.omega0 = 0.5;
        p.omega = 1.0 / 17.0;
        let r = check_assumptions(&v, &p, &GridSpec { radius: 10.0, points_per_axis: 41 });
        assert!(r.checks.iter().all(|c| c.passed), "{r:?}");
    }

    #[test]
    fn cosine_convexity_fails_with_witness_near_pi() {
        let v = cosine(2.0);
        let p = ModelParams::new(1.0, vec![0.0, 0.0]);
        let r = check_assumptions(&v, &p, &GridSpec::default_for(2, &p.u));
        let c = r.get("uniform_convexity").unwrap();
        assert!(!c.passed);
        let w = c.witness.as_ref().unwrap();
        assert!(((w[0].abs() % (2.0 * PI)) - PI).abs() < 0.2);
    }

    #[test]
    fn cosine_quadratic_lower_bound_radius_20() {
        let v = cosine(0.3);
        let mut p = ModelParams::new(1.0, vec![0.0, 0.0]);
        p.omega = 0.1;
        p.omega0 = 0.9;
        let r = check_assumptions(&v, &p, &GridSpec { radius: 20.0, points_per_axis: 101 });
        assert!(r.get("quadratic_lower_bound").unwrap().passed);
    }

    #[test]
    fn custom_polynomial_must_be_even() {
        let odd = vec![PolyTerm { powers: vec![1, 0], coeff: 1.0 }];
        assert!(EvenPolynomial::new(2, odd).is_err());
        let even = vec![PolyTerm { powers: vec![2, 0], coeff: 0.5 }, PolyTerm { powers: vec![0, 2], coeff: 0.5 }, PolyTerm { powers: vec![2, 2], coeff: 0.1 }];
        let v = EvenPolynomial::new(2, even).unwrap();
        assert!((v.value(&[1.0, 2.0]) - (0.5 + 2.0 + 0.4)).abs() < 1e-14);
        assert!((v.q_v()[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn config_parses_tagged_potentials() {
        let c: PotentialConfig = serde_json::from_str(r#"{"kind":"cosine_perturbed","a":0.3,"b":[1.0,0.0]}"#).unwrap();
        assert_eq!(builtin_potential(&c, 2).unwrap().kind(), "cosine_perturbed");
        let bad: std::result::Result<PotentialConfig, _> = serde_json::from_str(r#"{"kind":"cosine_perturbed","a":0.3,"b":[1.0,0.0],"c":1}"#);
        assert!(bad.is_err());
    }
}
