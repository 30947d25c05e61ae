//! Weight operators for arbitrary vector fields: reference operators, the
//! block-diagonal assembly over gradient fields `𝒪_N` and their orthogonal
//! complement, the `Ā` recursion, and numerical checks of the weight
//! function properties.
//!
//! Everything is dense in the flat layout `d·x + i` of
//! [`gradlab_core::fields::VectorField::to_flat`].

use gradlab_core::fields::VectorField;
use gradlab_core::gaussian::{gradient_covariance_matrix, quad_exp_integral, scalar_covariance_matrix, CovarianceDecomposition, DENSE_SITE_CAP};
use gradlab_core::torus::MultiIndex;
use gradlab_core::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rg_core::{difference_stencil, field_norm, NormParams};
use crate::rg_geom::{Geometry, Polymer};

/// Inputs of the weight constants. `omega`, `c_d`, `k1` and `mu` are
/// external constants of the large-field analysis; they default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WfConstantsConfig {
    pub omega0: f64,
    pub zeta: f64,
    /// Splitting parameter `ε`; `None` picks `min(ζ/(2(1−ζ)), ½)`. The
    /// defaults `ζ = 0.6`, `ε = ¼` give `ζ' = ½`.
    pub eps: Option<f64>,
    pub omega: f64,
    pub c_d: f64,
    pub k1: f64,
    pub mu: f64,
}

impl Default for WfConstantsConfig {
    fn default() -> Self {
        Self { omega0: 1.0, zeta: 0.6, eps: Some(0.25), omega: 1.0, c_d: 1.0, k1: 1.0, mu: 1.0 }
    }
}

/// Derived weight constants together with the inputs they came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WfConstants {
    pub config: WfConstantsConfig,
    pub l: usize,
    pub d: usize,
    pub eps: f64,
    /// `1 − (1+ε)(1−ζ)`.
    pub zeta_prime: f64,
    /// `(1+ε⁻¹)/(1+ε)`.
    pub frak_r: f64,
    /// `(2R+1)^d`.
    pub xi_max: f64,
    /// `5⌊d/3⌋ + 7`.
    pub n_tilde: usize,
    pub lambda: f64,
    pub delta: f64,
    pub rho: f64,
    pub kappa: f64,
    pub h0: f64,
}

impl WfConstants {
    /// `δ_k = 4^{−k} δ`.
    pub fn delta_at(&self, k: usize) -> f64 {
        self.delta * 0.25f64.powi(k as i32)
    }
}

/// `ω₀ = min(λ_min, 1/λ_max)` so that `ω₀|z|² ≤ Q(z) ≤ ω₀⁻¹|z|²`.
pub fn omega0_of(q_v: &DMatrix<f64>) -> Result<f64> {
    let e = SymmetricEigen::new((q_v + q_v.transpose()) * 0.5).eigenvalues;
    if e.min() <= 0.0 {
        return Err(Error::InvalidParam("quadratic form is not positive definite".into()));
    }
    Ok(e.min().min(1.0 / e.max()))
}

pub fn wf_constants(cfg: &WfConstantsConfig, l: usize, d: usize, range: usize) -> Result<WfConstants> {
    let positive = [("omega0", cfg.omega0), ("omega", cfg.omega), ("c_d", cfg.c_d), ("K1", cfg.k1), ("mu", cfg.mu)];
    for (name, v) in positive {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParam(format!("{name} must be positive, got {v}")));
        }
    }
    if !(cfg.zeta > 0.0 && cfg.zeta < 1.0) {
        return Err(Error::InvalidParam(format!("zeta must lie in (0, 1), got {}", cfg.zeta)));
    }
    let eps_max = cfg.zeta / (2.0 * (1.0 - cfg.zeta));
    let eps = cfg.eps.unwrap_or(eps_max.min(0.5));
    if !(eps > 0.0 && eps < 1.0 && eps <= eps_max * (1.0 + 1e-12)) {
        return Err(Error::InvalidParam(format!("eps must lie in (0, min(1, {eps_max})], got {eps}")));
    }
    let zeta_prime = 1.0 - (1.0 + eps) * (1.0 - cfg.zeta);
    let frak_r = (1.0 + 1.0 / eps) / (1.0 + eps);
    let xi_max = ((2 * range + 1) as f64).powi(d as i32);
    let n_tilde = 5 * (d / 3) + 7;
    let lambda = (cfg.omega0 * zeta_prime / 4.0)
        .min(1.0 / (zeta_prime / (3.0 * cfg.omega) + frak_r * (1.0 - zeta_prime) / cfg.omega0))
        .min(0.25);
    let delta = (zeta_prime / (4.0 * cfg.omega * xi_max)).min(zeta_prime / (8.0 * cfg.mu * xi_max));
    let rho = (1.0 + zeta_prime / 4.0).cbrt() - 1.0;
    let kappa = (rho * (l as f64).powf(-(4.0 * (d + n_tilde) as f64) - 2.0) / cfg.k1).min(cfg.omega0 / 2.0);
    let h0 = delta.powf(-0.5) * 8f64.sqrt().max(2f64.sqrt() * cfg.c_d);
    Ok(WfConstants { config: *cfg, l, d, eps, zeta_prime, frak_r, xi_max, n_tilde, lambda, delta, rho, kappa, h0 })
}

/// `m(α)_ii = 1 / |{j : α_j + δ_ij > 0}|`.
pub fn m_alpha(alpha: &MultiIndex) -> Vec<f64> {
    let d = alpha.dim();
    (0..d)
        .map(|i| {
            let count = (0..d).filter(|&j| alpha.0[j] + u32::from(i == j) > 0).count();
            1.0 / count as f64
        })
        .collect()
}

/// An operator split over `𝒪_N ⊕ 𝒪_N^⊥`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator {
    pub grad: DMatrix<f64>,
    pub perp: DMatrix<f64>,
}

impl BlockOperator {
    pub fn full(&self) -> DMatrix<f64> {
        &self.grad + &self.perp
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { grad: &self.grad + &other.grad, perp: &self.perp + &other.perp }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { grad: &self.grad * s, perp: &self.perp * s }
    }

    /// `(v, A v)`.
    pub fn quad(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(self.full() * v))
    }
}

/// The four reference operators of one polymer.
#[derive(Debug, Clone)]
pub struct ReferenceOperators {
    /// `𝓜_{k,∇}^X`, with the over-counting weights `m(α)`.
    pub m_grad: DMatrix<f64>,
    /// `𝓜_k^X`.
    pub m_plain: DMatrix<f64>,
    /// `𝓖_{k,∇}^X`.
    pub g_grad: DMatrix<f64>,
    /// `𝓖_k^X`.
    pub g_plain: DMatrix<f64>,
}

/// Largest eigenvalue magnitude; used to make tolerances relative.
pub fn spectral_scale(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new((a + a.transpose()) * 0.5).eigenvalues.abs().max()
}

pub fn min_eig(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new((a + a.transpose()) * 0.5).eigenvalues.min()
}

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Dense operators on one torus. Holds the projections onto gradient
/// fields, the scale covariances, the quadratic form and the constants.
#[derive(Debug, Clone)]
pub struct WeightSystem {
    geom: Geometry,
    q_v: DMatrix<f64>,
    consts: WfConstants,
    h: f64,
    /// `M`: derivatives of order `< M` enter `𝓜`.
    m_order: usize,
    n: usize,
    d: usize,
    /// Moore–Penrose inverse of `∇*∇` on scalars.
    lap_pinv: DMatrix<f64>,
    p_grad: DMatrix<f64>,
    p_perp: DMatrix<f64>,
    /// Scalar covariances `𝒞_1, …, 𝒞_{N+1}`.
    cov: Vec<DMatrix<f64>>,
    /// `∇𝒞_j∇*`.
    cov_grad: Vec<DMatrix<f64>>,
}

impl WeightSystem {
    pub fn new(geom: &Geometry, q_v: &DMatrix<f64>, consts: &WfConstants, h: f64, decomposition: &CovarianceDecomposition) -> Result<Self> {
        let t = geom.torus();
        let (n, d) = (t.volume(), t.d());
        if n > DENSE_SITE_CAP {
            return Err(Error::SizeCap { sites: n, cap: DENSE_SITE_CAP });
        }
        if q_v.nrows() != d || q_v.ncols() != d {
            return Err(Error::Mismatch(format!("quadratic form must be {d}x{d}")));
        }
        if decomposition.kernels.len() != t.n() + 1 {
            return Err(Error::Mismatch(format!("need {} scale covariances, got {}", t.n() + 1, decomposition.kernels.len())));
        }
        if decomposition.kernels.iter().any(|k| k.torus != *t) {
            return Err(Error::Mismatch("covariances live on a different torus".into()));
        }
        if !(h > 0.0) {
            return Err(Error::InvalidParam(format!("h must be positive, got {h}")));
        }
        let mut lap = DMatrix::zeros(n, n);
        for x in 0..n {
            for i in 0..d {
                let y = t.shift(x, i, 1);
                lap[(x, x)] += 2.0;
                lap[(x, y)] -= 1.0;
                lap[(y, x)] -= 1.0;
            }
        }
        let j = DMatrix::from_element(n, n, 1.0 / n as f64);
        let lap_pinv = (&lap + &j).try_inverse().ok_or_else(|| Error::Numerical("lattice Laplacian is singular beyond constants".into()))? - &j;
        let dn = d * n;
        let mut p_grad = DMatrix::zeros(dn, dn);
        for a in 0..dn {
            let (x, i) = (a / d, a % d);
            let xp = t.shift(x, i, 1);
            for b in 0..dn {
                let (y, jj) = (b / d, b % d);
                let yp = t.shift(y, jj, 1);
                p_grad[(a, b)] = lap_pinv[(xp, yp)] - lap_pinv[(xp, y)] - lap_pinv[(x, yp)] + lap_pinv[(x, y)];
            }
        }
        let p_perp = DMatrix::identity(dn, dn) - &p_grad;
        let cov = decomposition.kernels.iter().map(scalar_covariance_matrix).collect::<Result<Vec<_>>>()?;
        let cov_grad = decomposition.kernels.iter().map(gradient_covariance_matrix).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            geom: geom.clone(),
            q_v: (q_v + q_v.transpose()) * 0.5,
            consts: *consts,
            h,
            m_order: geom.constants().m,
            n,
            d,
            lap_pinv,
            p_grad,
            p_perp,
            cov,
            cov_grad,
        })
    }

    /// Builds the system at `h = h₀`, raising `μ` to [`measured_mu`] when the
    /// configured value is smaller. Below that value the restricted inverses
    /// stop being positive definite.
    pub fn calibrated(geom: &Geometry, q_v: &DMatrix<f64>, cfg: &WfConstantsConfig, range: usize, decomposition: &CovarianceDecomposition) -> Result<Self> {
        let t = geom.torus();
        let consts = wf_constants(cfg, t.l(), t.d(), range)?;
        let first = Self::new(geom, q_v, &consts, consts.h0, decomposition)?;
        let mu = measured_mu(&first);
        if mu <= cfg.mu {
            return Ok(first);
        }
        let consts = wf_constants(&WfConstantsConfig { mu, ..*cfg }, t.l(), t.d(), range)?;
        Self::new(geom, q_v, &consts, consts.h0, decomposition)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }
    pub fn constants(&self) -> &WfConstants {
        &self.consts
    }
    pub fn dim(&self) -> usize {
        self.d * self.n
    }
    pub fn p_grad(&self) -> &DMatrix<f64> {
        &self.p_grad
    }
    pub fn p_perp(&self) -> &DMatrix<f64> {
        &self.p_perp
    }

    /// `h_k = 2^k h`.
    pub fn h_scale(&self, k: usize) -> f64 {
        self.h * 2f64.powi(k as i32)
    }

    /// Forward gradient `∇ : R^n → R^{dn}`.
    pub fn gradient_matrix(&self) -> DMatrix<f64> {
        let t = self.geom.torus();
        let mut g = DMatrix::zeros(self.dim(), self.n);
        for x in 0..self.n {
            for i in 0..self.d {
                g[(self.d * x + i, t.shift(x, i, 1))] += 1.0;
                g[(self.d * x + i, x)] -= 1.0;
            }
        }
        g
    }

    /// `∇_N^{−1}` on gradient fields, returning zero-sum scalars; it
    /// annihilates the orthogonal complement.
    pub fn inverse_gradient_matrix(&self) -> DMatrix<f64> {
        &self.lap_pinv * self.gradient_matrix().transpose()
    }

    /// `χ_X(x) = |{B ∈ X : x ∈ B⁺}|`.
    pub fn chi(&self, x: &Polymer) -> Vec<f64> {
        let mut chi = vec![0.0; self.n];
        for &b in x.blocks() {
            let single = self.geom.polymer(x.scale(), [b]).expect("block of the polymer");
            for s in self.geom.neighborhood_sites(&self.geom.plus(&single)) {
                chi[s] += 1.0;
            }
        }
        chi
    }

    pub fn indicator(&self, x: &Polymer) -> Vec<f64> {
        let mut ind = vec![0.0; self.n];
        for s in self.geom.sites(x) {
            ind[s] = 1.0;
        }
        ind
    }

    fn stencil_rows(&self, alpha: &MultiIndex) -> Vec<Vec<(usize, f64)>> {
        let t = self.geom.torus();
        let stencil = difference_stencil(alpha);
        (0..self.n).map(|x| stencil.iter().map(|(beta, c)| (t.translate(x, beta), *c)).collect()).collect()
    }

    /// `Σ_{|α| ≤ max} L^{2k|α|} (∇*)^α w m(α)^{[with_m]} ∇^α` componentwise.
    fn vector_form(&self, k: usize, weights: &[f64], max_order: usize, with_m: bool) -> DMatrix<f64> {
        let d = self.d;
        let l = self.geom.torus().l() as f64;
        let mut out = DMatrix::zeros(self.dim(), self.dim());
        if weights.iter().all(|&w| w == 0.0) {
            return out;
        }
        for alpha in MultiIndex::all(d, 0, max_order) {
            let scale = l.powi((2 * k * alpha.order()) as i32);
            let m = if with_m { m_alpha(&alpha) } else { vec![1.0; d] };
            for (x, row) in self.stencil_rows(&alpha).iter().enumerate() {
                if weights[x] == 0.0 {
                    continue;
                }
                for &(a, ca) in row {
                    for &(b, cb) in row {
                        let v = scale * weights[x] * ca * cb;
                        for (i, mi) in m.iter().enumerate() {
                            out[(d * a + i, d * b + i)] += v * mi;
                        }
                    }
                }
            }
        }
        out
    }

    /// Scalar `Σ_{1 ≤ |γ| ≤ M} L^{2k(|γ|−1)} (∇*)^γ w ∇^γ`.
    fn scalar_form(&self, k: usize, weights: &[f64]) -> DMatrix<f64> {
        let l = self.geom.torus().l() as f64;
        let mut out = DMatrix::zeros(self.n, self.n);
        for gamma in MultiIndex::all(self.d, 1, self.m_order) {
            let scale = l.powi((2 * k * (gamma.order() - 1)) as i32);
            for (x, row) in self.stencil_rows(&gamma).iter().enumerate() {
                if weights[x] == 0.0 {
                    continue;
                }
                for &(a, ca) in row {
                    for &(b, cb) in row {
                        out[(a, b)] += scale * weights[x] * ca * cb;
                    }
                }
            }
        }
        out
    }

    pub fn reference(&self, k: usize, x: &Polymer) -> ReferenceOperators {
        let chi = self.chi(x);
        let ind = self.indicator(x);
        let g_scale = 1.0 / self.h_scale(k).powi(2);
        ReferenceOperators {
            m_grad: self.vector_form(k, &chi, self.m_order - 1, true),
            m_plain: self.vector_form(k, &chi, self.m_order - 1, false),
            g_grad: self.vector_form(k, &ind, self.d / 2, true) * g_scale,
            g_plain: self.vector_form(k, &ind, self.d / 2, false) * g_scale,
        }
    }

    fn split(&self, on_grad: &DMatrix<f64>, on_perp: &DMatrix<f64>) -> BlockOperator {
        BlockOperator { grad: &self.p_grad * on_grad * &self.p_grad, perp: &self.p_perp * on_perp * &self.p_perp }
    }

    /// `M̄_k^X`, or the torus-wide `M̄_k` (no counting function) for `None`.
    pub fn m_bar(&self, k: usize, x: Option<&Polymer>) -> BlockOperator {
        let w = match x {
            Some(x) => self.chi(x),
            None => vec![1.0; self.n],
        };
        self.split(&self.vector_form(k, &w, self.m_order - 1, true), &self.vector_form(k, &w, self.m_order - 1, false))
    }

    /// `Ḡ_k` weighted by the indicator of a site set.
    pub fn g_bar_sites(&self, k: usize, sites: &[usize]) -> BlockOperator {
        let mut ind = vec![0.0; self.n];
        for &s in sites {
            ind[s] = 1.0;
        }
        let g_scale = 1.0 / self.h_scale(k).powi(2);
        self.split(&(self.vector_form(k, &ind, self.d / 2, true) * g_scale), &(self.vector_form(k, &ind, self.d / 2, false) * g_scale))
    }

    pub fn g_bar(&self, k: usize, x: &Polymer) -> BlockOperator {
        self.g_bar_sites(k, &self.geom.sites(x))
    }

    /// `𝒜_Q^X v(x) = 1_X(x) Q_V v(x)`.
    fn quadratic_local(&self, x: &Polymer) -> DMatrix<f64> {
        let d = self.d;
        let mut a = DMatrix::zeros(self.dim(), self.dim());
        for s in self.geom.sites(x) {
            for i in 0..d {
                for j in 0..d {
                    a[(d * s + i, d * s + j)] = self.q_v[(i, j)];
                }
            }
        }
        a
    }

    /// `X*` of a `k`-polymer as a `(k−1)`-polymer.
    pub fn star_below(&self, x: &Polymer) -> Result<Polymer> {
        let k = x.scale();
        if k == 0 {
            return Err(Error::InvalidParam("no scale below 0".into()));
        }
        let sites = self.geom.neighborhood_sites(&self.geom.star(x));
        self.geom.polymer(k - 1, sites.into_iter().map(|s| self.geom.block_of(k - 1, s)))
    }

    /// A `(k+1)`-polymer as the `k`-polymer of its children.
    pub fn refine(&self, x: &Polymer) -> Result<Polymer> {
        let k = x.scale();
        if k == 0 {
            return Err(Error::InvalidParam("no scale below 0".into()));
        }
        self.geom.polymer(k - 1, x.blocks().iter().flat_map(|&b| self.geom.children(k - 1, b)))
    }

    fn check_scale(&self, k: usize) -> Result<()> {
        if k > self.geom.torus().n() {
            return Err(Error::InvalidParam(format!("scale {k} exceeds N = {}", self.geom.torus().n())));
        }
        Ok(())
    }

    /// `Ā_k^X` for a `k`-polymer.
    pub fn a_bar(&self, x: &Polymer) -> Result<BlockOperator> {
        let k = x.scale();
        self.check_scale(k)?;
        let c = &self.consts;
        if k == 0 {
            let aq = self.quadratic_local(x);
            let m = self.m_bar(0, Some(x));
            let base = self.split(&(&aq * (1.0 - c.zeta_prime)), &(&aq * (c.frak_r * (1.0 - c.zeta_prime))));
            return Ok(base.add(&m.scaled(c.delta)));
        }
        let step = self.a_bar_step(&self.star_below(x)?)?;
        Ok(step.add(&self.m_bar(k, Some(x)).scaled(c.delta_at(k))))
    }

    /// `Ā_{k:k+1}^X` for a `k`-polymer.
    pub fn a_bar_step(&self, x: &Polymer) -> Result<BlockOperator> {
        let k = x.scale();
        let a = self.a_bar(x)?;
        let grad = restricted_step(&a.grad, &self.cov_grad[k], 1.0 + self.consts.zeta_prime / 4.0)?;
        Ok(BlockOperator { grad, perp: a.perp })
    }

    /// Scalar-side `M_k^X`.
    pub fn m_scalar(&self, k: usize, x: Option<&Polymer>) -> DMatrix<f64> {
        let w = match x {
            Some(x) => self.chi(x),
            None => vec![1.0; self.n],
        };
        self.scalar_form(k, &w)
    }

    /// Scalar-side `A_k^X` built by the same recursion on scalar fields.
    pub fn a_scalar(&self, x: &Polymer) -> Result<DMatrix<f64>> {
        let k = x.scale();
        self.check_scale(k)?;
        let c = &self.consts;
        if k == 0 {
            let mut a = self.m_scalar(0, Some(x)) * c.delta;
            let t = self.geom.torus();
            for s in self.geom.sites(x) {
                for i in 0..self.d {
                    for j in 0..self.d {
                        let q = (1.0 - c.zeta_prime) * self.q_v[(i, j)];
                        let (si, sj) = (t.shift(s, i, 1), t.shift(s, j, 1));
                        for (p, cp) in [(si, 1.0), (s, -1.0)] {
                            for (r, cr) in [(sj, 1.0), (s, -1.0)] {
                                a[(p, r)] += q * cp * cr;
                            }
                        }
                    }
                }
            }
            return Ok(a);
        }
        let step = self.a_scalar_step(&self.star_below(x)?)?;
        Ok(step + self.m_scalar(k, Some(x)) * c.delta_at(k))
    }

    /// Scalar-side `A_{k:k+1}^X`.
    pub fn a_scalar_step(&self, x: &Polymer) -> Result<DMatrix<f64>> {
        let a = self.a_scalar(x)?;
        restricted_step(&a, &self.cov[x.scale()], 1.0 + self.consts.zeta_prime / 4.0)
    }

    /// Largest entry of `Ā_{k,∇}^X − (∇^{−1})* A_k^X ∇^{−1}` relative to
    /// `max(1, max|Ā_{k,∇}^X|)`.
    pub fn structure_residual(&self, x: &Polymer) -> Result<f64> {
        let bar = self.a_bar(x)?.grad;
        let ginv = self.inverse_gradient_matrix();
        let pulled = ginv.transpose() * self.a_scalar(x)? * &ginv;
        Ok(max_abs(&(&bar - &pulled)) / max_abs(&bar).max(1.0))
    }

    /// Compare `ker Ā_{k,∇}^X ∩ 𝒪_N` with `∇(ker A_k^X ∩ 𝒳_N)`.
    pub fn kernel_check(&self, x: &Polymer) -> Result<KernelCheck> {
        let bar = self.a_bar(x)?.grad;
        let scalar = self.a_scalar(x)?;
        let eb = SymmetricEigen::new((&bar + bar.transpose()) * 0.5);
        let es = SymmetricEigen::new((&scalar + scalar.transpose()) * 0.5);
        let tb = KERNEL_TOL * eb.eigenvalues.abs().max().max(1.0);
        let ts = KERNEL_TOL * es.eigenvalues.abs().max().max(1.0);
        // Kernel vectors of Ā_∇ that lie in 𝒪_N.
        let mut grad_kernel = Vec::new();
        for (c, &ev) in eb.eigenvalues.iter().enumerate() {
            if ev.abs() <= tb {
                let v = eb.eigenvectors.column(c).into_owned();
                grad_kernel.push(v);
            }
        }
        let kb = if grad_kernel.is_empty() {
            DMatrix::zeros(self.dim(), 0)
        } else {
            let k = DMatrix::from_columns(&grad_kernel);
            &self.p_grad * k
        };
        let grad_dim = rank(&kb);
        let g = self.gradient_matrix();
        let mut scalar_kernel = Vec::new();
        for (c, &ev) in es.eigenvalues.iter().enumerate() {
            if ev.abs() <= ts {
                scalar_kernel.push(&g * es.eigenvectors.column(c));
            }
        }
        let ks = if scalar_kernel.is_empty() { DMatrix::zeros(self.dim(), 0) } else { DMatrix::from_columns(&scalar_kernel) };
        let scalar_dim = rank(&ks);
        let joint = if kb.ncols() + ks.ncols() == 0 {
            0
        } else {
            let mut cols: Vec<DVector<f64>> = kb.column_iter().map(|c| c.into_owned()).collect();
            cols.extend(ks.column_iter().map(|c| c.into_owned()));
            rank(&DMatrix::from_columns(&cols))
        };
        Ok(KernelCheck { grad_kernel_dim: grad_dim, scalar_kernel_dim: scalar_dim, joint_rank: joint, holds: grad_dim == scalar_dim && joint == grad_dim })
    }

    pub fn w_bar(&self, x: &Polymer, v: &DVector<f64>) -> Result<f64> {
        Ok((0.5 * self.a_bar(x)?.quad(v)).exp())
    }

    pub fn w_bar_step(&self, x: &Polymer, v: &DVector<f64>) -> Result<f64> {
        Ok((0.5 * self.a_bar_step(x)?.quad(v)).exp())
    }

    pub fn big_w_bar(&self, x: &Polymer, v: &DVector<f64>) -> f64 {
        (0.5 * self.g_bar(x.scale(), x).quad(v)).exp()
    }

    /// `|v|²_{k,ℓ²(B)}`.
    pub fn l2_seminorm_sq(&self, k: usize, block: &Polymer, v: &DVector<f64>) -> f64 {
        let t = self.geom.torus();
        let l = t.l() as f64;
        let sites = self.geom.sites(block);
        let mut best = 0.0f64;
        for alpha in MultiIndex::all(self.d, 0, self.d / 2) {
            let rows = self.stencil_rows(&alpha);
            for i in 0..self.d {
                let s: f64 = sites
                    .iter()
                    .map(|&x| rows[x].iter().map(|&(y, c)| c * v[self.d * y + i]).sum::<f64>().powi(2))
                    .sum();
                best = best.max(l.powi((2 * k * alpha.order()) as i32) * s);
            }
        }
        best / self.h_scale(k).powi(2)
    }

    fn random_fields(&self, seed: u64, count: usize) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(&mut rng))).collect()
    }

    /// Check one numbered weight-function property on an instance.
    pub fn verify_property(&self, property: u8, inst: &PropertyInstance) -> Result<PropertyReport> {
        let mut rep = PropertyReport::new(property, inst.x.scale());
        let geom = &self.geom;
        let need_y = || inst.y.as_ref().ok_or_else(|| Error::InvalidParam(format!("property {property} needs a second polymer")));
        match property {
            1 => {
                let y = need_y()?;
                if !y.is_subset_of(&inst.x) {
                    return Err(Error::InvalidParam("property 1 needs Y ⊂ X".into()));
                }
                let (ax, ay) = (self.a_bar(&inst.x)?.full(), self.a_bar(y)?.full());
                let (sx, sy) = (self.a_bar_step(&inst.x)?.full(), self.a_bar_step(y)?.full());
                rep.certify_psd(&(&ax - &ay), spectral_scale(&ax));
                rep.certify_psd(&(&sx - &sy), spectral_scale(&sx));
            }
            2 => {
                let bound = self.m_bar(inst.x.scale(), None).full() / self.consts.lambda;
                let ax = self.a_bar(&inst.x)?.full();
                let sx = self.a_bar_step(&inst.x)?.full();
                rep.certify_psd(&(&bound - &ax), spectral_scale(&bound));
                rep.certify_psd(&(&bound - &sx), spectral_scale(&bound));
            }
            3 | 4 | 5 => {
                let y = need_y()?;
                let ok = match property {
                    3 => geom.strictly_disjoint(&inst.x, y),
                    4 => geom.distance(&inst.x, y) as f64 >= 0.75 * (geom.torus().l() as f64).powi(inst.x.scale() as i32 + 1),
                    _ => !inst.x.intersects(y),
                };
                if !ok {
                    return Err(Error::InvalidParam(format!("polymers do not satisfy the separation of property {property}")));
                }
                let u = inst.x.union(y);
                let (whole, parts) = match property {
                    3 => (self.a_bar(&u)?.full(), self.a_bar(&inst.x)?.full() + self.a_bar(y)?.full()),
                    4 => (self.a_bar_step(&u)?.full(), self.a_bar_step(&inst.x)?.full() + self.a_bar_step(y)?.full()),
                    _ => (self.g_bar(u.scale(), &u).full(), self.g_bar(u.scale(), &inst.x).full() + self.g_bar(u.scale(), y).full()),
                };
                rep.certify_equal(&whole, &parts);
            }
            6 => {
                let y = need_y()?;
                if inst.x.intersects(y) {
                    return Err(Error::InvalidParam("property 6 needs disjoint polymers".into()));
                }
                let lhs = self.a_bar(&inst.x.union(y))?.full();
                let rhs = self.a_bar(&inst.x)?.full() + self.g_bar(y.scale(), y).full();
                rep.certify_psd(&(&lhs - &rhs), spectral_scale(&lhs));
            }
            7 => {
                let u = geom.pi_map(&inst.x)?;
                let u_plus = geom.neighborhood_sites(&geom.plus(&u));
                let lhs = self.a_bar(&u)?.full();
                let rhs = self.a_bar_step(&inst.x)?.full() + self.g_bar_sites(inst.x.scale(), &u_plus).full() * 2.0;
                rep.certify_psd(&(&lhs - &rhs), spectral_scale(&lhs));
            }
            8 => {
                // X is a (k+1)-polymer; the step operator sees it as a k-polymer.
                let x = &inst.x;
                let k1 = x.scale();
                if k1 == 0 {
                    return Err(Error::InvalidParam("property 8 needs a polymer at scale k+1 >= 1".into()));
                }
                let fine = self.refine(x)?;
                let upper = self.a_bar(x)?.full();
                let step = self.a_bar_step(&fine)?.full();
                let majorant = self.m_bar(k1, Some(x)).full() * self.consts.delta_at(k1);
                rep.certify_psd(&(&upper - &step - &majorant), spectral_scale(&upper));
                let params = NormParams::new(geom.torus().l(), self.d, self.h)?;
                let mut slack = f64::INFINITY;
                let mut majorant_slack = f64::INFINITY;
                for v in self.random_fields(inst.seed, inst.samples) {
                    let vf = VectorField::from_flat(geom.torus(), v.as_slice())?;
                    let norm = field_norm(&vf, x, geom, k1, &params)?;
                    let lhs = 0.5 * norm * norm + 0.5 * v.dot(&(&step * &v));
                    let rhs = 0.5 * v.dot(&(&upper * &v));
                    slack = slack.min((rhs - lhs) / rhs.abs().max(1.0));
                    majorant_slack = majorant_slack.min((v.dot(&(&majorant * &v)) - norm * norm) / (norm * norm).max(1.0));
                }
                rep.random_min_slack = Some(slack);
                rep.majorant_min_slack = Some(majorant_slack);
                rep.holds &= slack >= -1e-9;
                rep.note = "the majorant slack checks |v|^2 <= delta (v, M v) on the same samples".into();
            }
            9 | 10 => {
                if property == 10 && inst.x.size() != 1 {
                    return Err(Error::InvalidParam("property 10 is stated for single blocks".into()));
                }
                self.integral_check(&mut rep, inst)?;
            }
            _ => return Err(Error::InvalidParam(format!("no weight-function property {property}"))),
        }
        Ok(rep)
    }

    fn integral_check(&self, rep: &mut PropertyReport, inst: &PropertyInstance) -> Result<()> {
        let x = &inst.x;
        let k = x.scale();
        let p = 1.0 + inst.rho_bar;
        let a = self.a_bar(x)?.full() * p;
        let step = self.a_bar_step(x)?;
        let c = &self.cov_grad[k];
        let size = x.size().max(1) as f64;
        let mut fields = vec![DVector::zeros(self.dim())];
        fields.extend(self.random_fields(inst.seed, inst.samples).into_iter().map(|v| v * 0.1));
        let mut worst = 0.0f64;
        let mut first = None;
        for v in &fields {
            let q = quad_exp_integral(c, &a, v)?;
            let lhs_log = q.log_value / p;
            let ratio_log = lhs_log - 0.5 * step.quad(v);
            worst = worst.max(2.0 * (ratio_log / size).exp());
            if first.is_none() {
                first = Some(q);
            }
        }
        let q0 = first.expect("at least one field");
        rep.measured_constant = Some(worst);
        // Monte Carlo at v = 0; the estimator has finite variance when the
        // doubled exponent still integrates.
        let root = psd_root(c);
        let mut rng = ChaCha8Rng::seed_from_u64(inst.seed ^ 0x9e37);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..inst.mc_samples {
            let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(&mut rng));
            let eta = &root * z;
            let w = (0.5 * eta.dot(&(&a * &eta))).exp();
            sum += w;
            sum_sq += w * w;
        }
        let m = inst.mc_samples as f64;
        let mean = sum / m;
        let se = ((sum_sq / m - mean * mean).max(0.0) / m).sqrt();
        let finite_variance = 2.0 * q0.max_eig < 1.0;
        let agree = (mean - q0.value).abs() <= (3.0 * se).max(1e-10 * q0.value.abs());
        rep.mc = Some(McComparison { exact: q0.value, mean, se, finite_variance, agree });
        // A 3-SE test is meaningless for an infinite-variance estimator, so
        // only finite-variance instances let the Monte Carlo oracle decide.
        rep.holds = worst.is_finite() && (agree || !finite_variance);
        if !finite_variance {
            rep.note = format!(
                "Monte Carlo not used: weights have infinite variance (largest eigenvalue of CA is {:.4})",
                q0.max_eig
            );
        }
        Ok(())
    }
}

const KERNEL_TOL: f64 = 1e-10;

/// Numerical rank of a matrix whose columns have norm at most one.
fn rank(a: &DMatrix<f64>) -> usize {
    if a.ncols() == 0 {
        return 0;
    }
    a.clone().svd(false, false).singular_values.iter().filter(|&&s| s > 1e-6).count()
}

fn psd_root(c: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new((c + c.transpose()) * 0.5);
    let s = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

/// `(A|^{−1} − c P C P)^{−1}` on `(ker A)^⊥` and zero on `ker A`, where
/// `A|` is the restriction of `A` to `(ker A)^⊥`.
pub fn restricted_step(a: &DMatrix<f64>, cov: &DMatrix<f64>, c: f64) -> Result<DMatrix<f64>> {
    let e = SymmetricEigen::new((a + a.transpose()) * 0.5);
    let tol = KERNEL_TOL * e.eigenvalues.abs().max().max(1.0);
    let keep: Vec<usize> = (0..e.eigenvalues.len()).filter(|&i| e.eigenvalues[i] > tol).collect();
    if keep.is_empty() {
        return Ok(DMatrix::zeros(a.nrows(), a.ncols()));
    }
    let u = e.eigenvectors.select_columns(&keep);
    let inv = DMatrix::from_diagonal(&DVector::from_iterator(keep.len(), keep.iter().map(|&i| 1.0 / e.eigenvalues[i])));
    let t = inv - u.transpose() * cov * &u * c;
    let et = SymmetricEigen::new((&t + t.transpose()) * 0.5);
    let lo = et.eigenvalues.min();
    if lo <= 0.0 {
        let hi = et.eigenvalues.max();
        return Err(Error::Numerical(format!(
            "restricted inverse minus covariance is not positive definite: spectrum [{lo:.6e}, {hi:.6e}] on a range of dimension {}",
            keep.len()
        )));
    }
    let tinv = &et.eigenvectors * DMatrix::from_diagonal(&et.eigenvalues.map(|x| 1.0 / x)) * et.eigenvectors.transpose();
    Ok(&u * tinv * u.transpose())
}

/// `max_k ‖𝒞_{k+1}^{1/2} M_k 𝒞_{k+1}^{1/2}‖` on scalar fields: the size of
/// the torus-wide reference operator against the next covariance.
pub fn measured_mu(system: &WeightSystem) -> f64 {
    let n_scales = system.geom.torus().n();
    let mut best = 0.0f64;
    for k in 0..=n_scales {
        let root = psd_root(&system.cov[k]);
        let m = system.m_scalar(k, None);
        best = best.max(spectral_scale(&(&root * m * &root)));
    }
    best
}

/// Dimensions in the kernel identity `ker Ā_{k,∇}^X = ∇(ker A_k^X)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelCheck {
    pub grad_kernel_dim: usize,
    pub scalar_kernel_dim: usize,
    /// Rank of both kernels together; equal to each dimension when the
    /// spaces coincide.
    pub joint_rank: usize,
    pub holds: bool,
}

/// Instance for [`WeightSystem::verify_property`].
#[derive(Debug, Clone)]
pub struct PropertyInstance {
    pub x: Polymer,
    pub y: Option<Polymer>,
    pub seed: u64,
    /// Random fields for the sampled checks.
    pub samples: usize,
    pub mc_samples: usize,
    pub rho_bar: f64,
}

impl PropertyInstance {
    pub fn new(x: Polymer) -> Self {
        Self { x, y: None, seed: 1, samples: 20, mc_samples: 20_000, rho_bar: 0.0 }
    }

    pub fn with_y(mut self, y: Polymer) -> Self {
        self.y = Some(y);
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McComparison {
    pub exact: f64,
    pub mean: f64,
    pub se: f64,
    pub finite_variance: bool,
    pub agree: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: u8,
    pub k: usize,
    pub holds: bool,
    /// Smallest eigenvalue over the certified operator inequalities.
    pub min_eig: Option<f64>,
    /// Relative residual of the certified operator identities.
    pub residual: Option<f64>,
    pub random_min_slack: Option<f64>,
    pub majorant_min_slack: Option<f64>,
    /// Measured `𝒜` for the integral properties.
    pub measured_constant: Option<f64>,
    pub mc: Option<McComparison>,
    pub note: String,
}

impl PropertyReport {
    fn new(property: u8, k: usize) -> Self {
        Self {
            property,
            k,
            holds: true,
            min_eig: None,
            residual: None,
            random_min_slack: None,
            majorant_min_slack: None,
            measured_constant: None,
            mc: None,
            note: String::new(),
        }
    }

    fn certify_psd(&mut self, diff: &DMatrix<f64>, scale: f64) {
        let e = min_eig(diff);
        let rel = e / scale.max(1.0);
        self.min_eig = Some(self.min_eig.map_or(rel, |m| m.min(rel)));
        self.holds &= rel >= -1e-9;
    }

    fn certify_equal(&mut self, a: &DMatrix<f64>, b: &DMatrix<f64>) {
        let r = max_abs(&(a - b)) / max_abs(a).max(1.0);
        self.residual = Some(self.residual.map_or(r, |m| m.max(r)));
        self.holds &= r < 1e-10;
    }
}
