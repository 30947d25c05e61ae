//! Gaussian reference measures on zero-sum scalar fields and on gradient
//! fields: Fourier multipliers, exact spectral sampling, covariance kernels,
//! Gaussian integrals of quadratic exponentials, Wick moments, and scale
//! decompositions of the covariance.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{q_vector, FftEngine, ScalarField};
use crate::torus::TorusSpec;

/// Largest torus on which dense operators are built.
pub const DENSE_SITE_CAP: usize = 4096;

/// The Gaussian measure with density `exp(−½ Σ_x ⟨∇φ(x), A ∇φ(x)⟩)` on
/// zero-sum fields, `A = Q_V − q`.
#[derive(Clone, Debug)]
pub struct GaussianSpec {
    torus: TorusSpec,
    effective: DMatrix<f64>,
    /// `λ(p) = ⟨q(p), A q̄(p)⟩`, natural order, `λ(0) = 0`.
    multipliers: Vec<f64>,
}

/// Operator norm of a symmetric matrix.
pub fn sym_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.abs().max()
}

impl GaussianSpec {
    /// Measure with effective stiffness matrix `a` (no bound on `q`).
    pub fn new(torus: &TorusSpec, a: &DMatrix<f64>) -> Result<Self> {
        let d = torus.d();
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::Mismatch(format!("stiffness matrix must be {d}x{d}")));
        }
        let mut multipliers = vec![0.0; torus.volume()];
        for (p, m) in multipliers.iter_mut().enumerate().skip(1) {
            let q = q_vector(torus, p);
            let mut s = 0.0;
            for i in 0..d {
                for j in 0..d {
                    s += a[(i, j)] * (q[i] * q[j].conj()).re;
                }
            }
            if s <= 0.0 {
                return Err(Error::InvalidParam(format!("multiplier {s} at mode {:?} is not positive", torus.coords(p))));
            }
            *m = s;
        }
        Ok(Self { torus: torus.clone(), effective: (a + a.transpose()) * 0.5, multipliers })
    }

    pub fn torus(&self) -> &TorusSpec {
        &self.torus
    }
    pub fn effective(&self) -> &DMatrix<f64> {
        &self.effective
    }
    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    /// `log Z = ½ Σ_{p≠0} log(2π/λ(p))` for the density above w.r.t. the
    /// Hausdorff measure on zero-sum fields.
    pub fn log_normalizer(&self) -> f64 {
        self.multipliers.iter().skip(1).map(|&l| 0.5 * (2.0 * PI / l).ln()).sum()
    }

    /// `(f, C f)` for the covariance `C` of this measure, with the zero mode
    /// of `f` dropped.
    pub fn variance_of(&self, f: &[f64]) -> f64 {
        let eng = FftEngine::new(&self.torus);
        let h = eng.forward_real(f);
        let v = self.torus.volume() as f64;
        h.iter().zip(&self.multipliers).skip(1).map(|(c, l)| c.norm_sqr() / l).sum::<f64>() / v
    }
}

/// Build the measure for `Q_V − q` after checking `‖q‖ ≤ κ = ω₀/2`.
pub fn build_spec(q_v: &DMatrix<f64>, q: &DMatrix<f64>, torus: &TorusSpec, omega0: f64) -> Result<GaussianSpec> {
    let kappa = 0.5 * omega0;
    let nq = sym_norm(q);
    if nq > kappa {
        return Err(Error::InvalidParam(format!("|q| = {nq} exceeds kappa = {kappa}")));
    }
    let a = q_v - q;
    if SymmetricEigen::new(a.clone()).eigenvalues.min() <= 0.0 {
        return Err(Error::InvalidParam("Q_V - q is not positive definite".into()));
    }
    GaussianSpec::new(torus, &a)
}

/// Exact spectral sampler. Each complex FFT of white noise yields two
/// independent samples (real and imaginary parts).
#[derive(Clone)]
pub struct GaussianSampler {
    spec: GaussianSpec,
    engine: FftEngine,
    filter: Vec<f64>,
}

impl GaussianSampler {
    /// Sampler for the measure scaled to inverse temperature `beta`.
    pub fn new(spec: &GaussianSpec, beta: f64) -> Self {
        let filter = spec.multipliers.iter().enumerate().map(|(p, &l)| if p == 0 { 0.0 } else { (beta * l).sqrt().recip() }).collect();
        Self { spec: spec.clone(), engine: FftEngine::new(&spec.torus), filter }
    }

    pub fn spec(&self) -> &GaussianSpec {
        &self.spec
    }

    pub fn sample_pair<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let n = self.spec.torus.volume();
        let mut z: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
        self.engine.forward(&mut z);
        for (c, f) in z.iter_mut().zip(&self.filter) {
            *c *= f;
        }
        self.engine.inverse(&mut z);
        (z.iter().map(|c| c.re).collect(), z.iter().map(|c| c.im).collect())
    }
}

/// `count` i.i.d. samples at unit temperature, deterministic in `seed`.
pub fn sample(spec: &GaussianSpec, seed: u64, count: usize) -> Vec<ScalarField> {
    let s = GaussianSampler::new(spec, 1.0);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (a, b) = s.sample_pair(&mut rng);
        out.push(ScalarField { spec: spec.torus.clone(), values: a });
        if out.len() < count {
            out.push(ScalarField { spec: spec.torus.clone(), values: b });
        }
    }
    out
}

/// Scalar kernel `𝒞(x)` and gradient kernels `𝒞^∇_{ij}(x) = ∇_i∇*_j 𝒞(x)`,
/// indexed by natural-order offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceKernel {
    pub torus: TorusSpec,
    pub scalar: Vec<f64>,
    /// `grad[i*d + j]`.
    pub grad: Vec<Vec<f64>>,
}

impl CovarianceKernel {
    pub fn from_scalar(torus: &TorusSpec, scalar: Vec<f64>) -> Result<Self> {
        if scalar.len() != torus.volume() {
            return Err(Error::Mismatch("kernel length does not match the torus".into()));
        }
        let d = torus.d();
        let mut grad = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let g = (0..torus.volume())
                    .map(|z| {
                        let zi = torus.shift(z, i, 1);
                        scalar[torus.shift(zi, j, -1)] - scalar[zi] - scalar[torus.shift(z, j, -1)] + scalar[z]
                    })
                    .collect();
                grad.push(g);
            }
        }
        Ok(Self { torus: torus.clone(), scalar, grad })
    }

    pub fn at(&self, offset: &[i64]) -> f64 {
        self.scalar[self.torus.index_of(offset)]
    }

    pub fn grad_at(&self, i: usize, j: usize, offset: &[i64]) -> f64 {
        self.grad[i * self.torus.d() + j][self.torus.index_of(offset)]
    }

    /// `E[η_i(x) η_j(y)] = 𝒞^∇_{ij}(x − y)` for natural-order sites.
    pub fn grad_between(&self, i: usize, x: usize, j: usize, y: usize) -> f64 {
        let cx = self.torus.coords(x);
        let cy = self.torus.coords(y);
        let diff: Vec<i64> = cx.iter().zip(&cy).map(|(a, b)| a - b).collect();
        self.grad_at(i, j, &diff)
    }

    /// Max deviation between the Fourier transform of each gradient kernel
    /// and `q_i(p) q_j(−p) 𝒞̂(p)`.
    pub fn fourier_residual(&self) -> f64 {
        let eng = FftEngine::new(&self.torus);
        let d = self.torus.d();
        let ch = eng.forward_real(&self.scalar);
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let gh = eng.forward_real(&self.grad[i * d + j]);
                for p in 0..self.torus.volume() {
                    let q = q_vector(&self.torus, p);
                    let expect = q[i] * q[j].conj() * ch[p];
                    worst = worst.max((gh[p] - expect).norm());
                }
            }
        }
        worst
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            torus: self.torus.clone(),
            scalar: self.scalar.iter().zip(&other.scalar).map(|(a, b)| a + b).collect(),
            grad: self.grad.iter().zip(&other.grad).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect(),
        }
    }

    /// Largest entrywise deviation from another kernel.
    pub fn max_diff(&self, other: &Self) -> f64 {
        let s = self.scalar.iter().zip(&other.scalar).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let g = self.grad.iter().zip(&other.grad).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max);
        s.max(g)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let f = ScalarField { spec: self.torus.clone(), values: self.scalar.clone() };
        f.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let f = ScalarField::read_from(r)?;
        Self::from_scalar(&f.spec, f.values)
    }
}

/// One sample of a centred stationary Gaussian field with scalar kernel
/// `k`, by filtering white noise with `√𝒞̂(p)`. Negative spectral values
/// from rounding are clipped to zero.
pub fn sample_from_kernel<R: Rng>(k: &CovarianceKernel, rng: &mut R) -> Vec<f64> {
    let eng = FftEngine::new(&k.torus);
    let spectrum = eng.forward_real(&k.scalar);
    let mut z: Vec<Complex64> = (0..k.torus.volume()).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
    eng.forward(&mut z);
    for (c, s) in z.iter_mut().zip(&spectrum) {
        *c *= s.re.max(0.0).sqrt();
    }
    eng.inverse(&mut z);
    z.iter().map(|c| c.re).collect()
}

/// `𝒞(x) = L^{−dN} Σ_{p≠0} e^{i⟨p,x⟩}/λ(p)`.
pub fn covariance_kernel(spec: &GaussianSpec) -> CovarianceKernel {
    let inv: Vec<Complex64> = spec.multipliers.iter().enumerate().map(|(p, &l)| Complex64::new(if p == 0 { 0.0 } else { 1.0 / l }, 0.0)).collect();
    let eng = FftEngine::new(&spec.torus);
    CovarianceKernel::from_scalar(&spec.torus, eng.inverse_real(inv)).expect("lengths agree")
}

fn check_dense(torus: &TorusSpec) -> Result<()> {
    if torus.volume() > DENSE_SITE_CAP {
        return Err(Error::SizeCap { sites: torus.volume(), cap: DENSE_SITE_CAP });
    }
    Ok(())
}

/// Dense covariance of the scalar field, `C[x,y] = 𝒞(x − y)`.
pub fn scalar_covariance_matrix(k: &CovarianceKernel) -> Result<DMatrix<f64>> {
    check_dense(&k.torus)?;
    let t = &k.torus;
    let n = t.volume();
    let coords: Vec<Vec<i64>> = (0..n).map(|x| t.coords(x)).collect();
    Ok(DMatrix::from_fn(n, n, |x, y| {
        let diff: Vec<i64> = coords[x].iter().zip(&coords[y]).map(|(a, b)| a - b).collect();
        k.at(&diff)
    }))
}

/// Dense covariance of the gradient field in the flat layout `d·x + i`.
pub fn gradient_covariance_matrix(k: &CovarianceKernel) -> Result<DMatrix<f64>> {
    check_dense(&k.torus)?;
    let t = &k.torus;
    let d = t.d();
    let n = t.volume();
    let coords: Vec<Vec<i64>> = (0..n).map(|x| t.coords(x)).collect();
    Ok(DMatrix::from_fn(d * n, d * n, |a, b| {
        let (x, i) = (a / d, a % d);
        let (y, j) = (b / d, b % d);
        let diff: Vec<i64> = coords[x].iter().zip(&coords[y]).map(|(p, q)| p - q).collect();
        k.grad_at(i, j, &diff)
    }))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadExpIntegral {
    pub value: f64,
    pub log_value: f64,
    /// Largest eigenvalue of `CA`.
    pub max_eig: f64,
    /// `−½ log det(I − CA)`.
    pub log_det_part: f64,
}

/// `∫ exp(½(v+x, A(v+x))) dν(x) = det(I − CA)^{−1/2} exp(½⟨v, (A + AC(I−CA)^{−1}A)v⟩)`
/// for a centred Gaussian `ν` with (possibly singular) covariance `C`.
pub fn quad_exp_integral(c: &DMatrix<f64>, a: &DMatrix<f64>, v: &DVector<f64>) -> Result<QuadExpIntegral> {
    let n = c.nrows();
    if c.ncols() != n || a.nrows() != n || a.ncols() != n || v.len() != n {
        return Err(Error::Mismatch("covariance, operator and shift dimensions differ".into()));
    }
    let ec = SymmetricEigen::new((c + c.transpose()) * 0.5);
    let sq = ec.eigenvalues.map(|l| l.max(0.0).sqrt());
    let root = &ec.eigenvectors * DMatrix::from_diagonal(&sq) * ec.eigenvectors.transpose();
    let s = &root * a * &root;
    let mu = SymmetricEigen::new((&s + s.transpose()) * 0.5).eigenvalues;
    let max_eig = mu.max();
    if max_eig >= 1.0 {
        return Err(Error::Divergent(max_eig));
    }
    let log_det_part = -0.5 * mu.iter().map(|m| (1.0 - m).ln()).sum::<f64>();
    let w = a * v;
    let m = DMatrix::identity(n, n) - c * a;
    let y = m.lu().solve(&w).ok_or_else(|| Error::Numerical("I - CA is singular".into()))?;
    let quad = v.dot(&w) + w.dot(&(c * y));
    let log_value = log_det_part + 0.5 * quad;
    Ok(QuadExpIntegral { value: log_value.exp(), log_value, max_eig, log_det_part })
}

/// Isserlis sum of `E[Π_k η_{i_k}(x_k)]` for `(site, component)` factors.
pub fn wick_moment(k: &CovarianceKernel, monomial: &[(usize, usize)]) -> Result<f64> {
    if monomial.len() > 8 {
        return Err(Error::Order { order: monomial.len(), max: 8 });
    }
    if monomial.len() % 2 == 1 {
        return Ok(0.0);
    }
    fn rec(k: &CovarianceKernel, rest: &[(usize, usize)]) -> f64 {
        if rest.is_empty() {
            return 1.0;
        }
        let (x0, i0) = rest[0];
        let mut total = 0.0;
        for m in 1..rest.len() {
            let (x, i) = rest[m];
            let c = k.grad_between(i0, x0, i, x);
            if c == 0.0 {
                continue;
            }
            let others: Vec<(usize, usize)> = rest[1..].iter().enumerate().filter(|(t, _)| t + 1 != m).map(|(_, e)| *e).collect();
            total += c * rec(k, &others);
        }
        total
    }
    Ok(rec(k, monomial))
}

/// Ordered scale kernels `(𝒞_1, …, 𝒞_{N+1})` with finite-range claims.
#[derive(Clone, Debug)]
pub struct CovarianceDecomposition {
    pub kernels: Vec<CovarianceKernel>,
    pub finite_range_claimed: Vec<bool>,
}

impl CovarianceDecomposition {
    pub fn total(&self) -> CovarianceKernel {
        let mut it = self.kernels.iter();
        let first = it.next().expect("nonempty decomposition").clone();
        it.fold(first, |acc, k| acc.add(k))
    }

    /// Largest deviation of the summed kernels from `total`.
    pub fn sum_residual(&self, total: &CovarianceKernel) -> f64 {
        self.total().max_diff(total)
    }

    /// Kernel of scale `k` (1-based).
    pub fn scale(&self, k: usize) -> &CovarianceKernel {
        &self.kernels[k - 1]
    }

    /// Directory layout: `decomposition.json` plus `kernel_<k>.bin`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = serde_json::json!({ "scales": self.kernels.len(), "finite_range_claimed": self.finite_range_claimed });
        fs::write(dir.join("decomposition.json"), serde_json::to_vec_pretty(&meta)?)?;
        for (k, ker) in self.kernels.iter().enumerate() {
            let mut f = fs::File::create(dir.join(format!("kernel_{}.bin", k + 1)))?;
            ker.write_to(&mut f)?;
        }
        Ok(())
    }

    /// Load an externally computed decomposition saved in the layout of
    /// [`CovarianceDecomposition::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("decomposition.json"))?)?;
        let scales = meta["scales"].as_u64().ok_or_else(|| Error::Mismatch("missing scales".into()))? as usize;
        let claimed: Vec<bool> = serde_json::from_value(meta["finite_range_claimed"].clone())?;
        if claimed.len() != scales {
            return Err(Error::Mismatch("finite-range flags do not match the scale count".into()));
        }
        let mut kernels = Vec::with_capacity(scales);
        for k in 1..=scales {
            let mut f = fs::File::open(dir.join(format!("kernel_{k}.bin")))?;
            kernels.push(CovarianceKernel::read_from(&mut f)?);
        }
        Ok(Self { kernels, finite_range_claimed: claimed })
    }
}

/// Band of a nonzero mode: band 1 holds the highest momenta; the band index
/// grows by one each time `|k|_∞` shrinks by the factor `ratio`.
pub fn band_of(torus: &TorusSpec, mode: usize, scales: usize, ratio: usize) -> usize {
    let m = torus.coords(mode).iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0);
    let top = torus.half() as usize;
    let mut band = 1;
    let mut reach = m * ratio;
    while band < scales && reach <= top {
        band += 1;
        reach *= ratio;
    }
    band
}

/// Partition of the Fourier modes into `scales` bands with edges at powers
/// of `ratio` (2 for dyadic bands). None of the bands is finite-range.
pub fn spectral_band_decomposition(spec: &GaussianSpec, scales: usize, ratio: usize) -> Result<CovarianceDecomposition> {
    if scales == 0 || ratio < 2 {
        return Err(Error::InvalidParam("need at least one scale and a band ratio of at least 2".into()));
    }
    let t = &spec.torus;
    let eng = FftEngine::new(t);
    let mut kernels = Vec::with_capacity(scales);
    for band in 1..=scales {
        let inv: Vec<Complex64> = (0..t.volume())
            .map(|p| {
                let v = if p != 0 && band_of(t, p, scales, ratio) == band { 1.0 / spec.multipliers[p] } else { 0.0 };
                Complex64::new(v, 0.0)
            })
            .collect();
        kernels.push(CovarianceKernel::from_scalar(t, eng.inverse_real(inv))?);
    }
    Ok(CovarianceDecomposition { kernels, finite_range_claimed: vec![false; scales] })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteRangeReport {
    pub finite_range: bool,
    /// Common tail value `−c_k`, when the tail is constant and nonempty.
    pub tail_value: Option<f64>,
    pub witness: Option<(Vec<i64>, f64)>,
}

/// Whether `kernel` is constant (to 1e-10) on `{|x|_∞ ≥ L^k/2}`.
pub fn check_finite_range(torus: &TorusSpec, kernel: &[f64], k: usize, l: usize) -> FiniteRangeReport {
    let reach = l.pow(k as u32) as i64;
    let mut tail: Option<f64> = None;
    for x in 0..torus.volume() {
        let c = torus.coords(x);
        let inf = c.iter().map(|v| v.abs()).max().unwrap_or(0);
        if 2 * inf < reach {
            continue;
        }
        match tail {
            None => tail = Some(kernel[x]),
            Some(t) if (kernel[x] - t).abs() > 1e-10 => {
                return FiniteRangeReport { finite_range: false, tail_value: None, witness: Some((c, kernel[x])) };
            }
            _ => {}
        }
    }
    FiniteRangeReport { finite_range: true, tail_value: tail, witness: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_multipliers() {
        let t = TorusSpec::new(5, 1, 1).unwrap();
        let s = GaussianSpec::new(&t, &DMatrix::identity(1, 1)).unwrap();
        for k in 1..5i64 {
            let p = t.index_of(&[k]);
            let expect = 2.0 - 2.0 * (2.0 * PI * k as f64 / 5.0).cos();
            assert!((s.multipliers()[p] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn kappa_bound_enforced() {
        let t = TorusSpec::new(5, 1, 2).unwrap();
        let qv = DMatrix::identity(2, 2);
        let q = DMatrix::identity(2, 2) * 0.5;
        assert!(build_spec(&qv, &q, &t, 0.5).is_err());
        assert!(build_spec(&qv, &(q * 0.5), &t, 0.5).is_ok());
    }

    #[test]
    fn cycle_variance_closed_form() {
        let t = TorusSpec::new(5, 1, 1).unwrap();
        let s = GaussianSpec::new(&t, &DMatrix::identity(1, 1)).unwrap();
        let k = covariance_kernel(&s);
        assert!((k.at(&[0]) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_determinant_value() {
        let c = DMatrix::from_element(1, 1, 0.5);
        let a = DMatrix::from_element(1, 1, 0.5);
        let r = quad_exp_integral(&c, &a, &DVector::zeros(1)).unwrap();
        assert!((r.value - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        let big = DMatrix::from_element(1, 1, 2.0);
        assert!(matches!(quad_exp_integral(&c, &big, &DVector::zeros(1)), Err(Error::Divergent(_))));
    }

    #[test]
    fn finite_range_checker_cases() {
        let t = TorusSpec::new(5, 2, 2).unwrap();
        let c = check_finite_range(&t, &vec![0.7; 625], 1, 5);
        assert!(c.finite_range && (c.tail_value.unwrap() - 0.7).abs() < 1e-15);
        let mut nn = vec![0.0; 625];
        nn[0] = 4.0;
        for a in 0..2 {
            nn[t.shift(0, a, 1)] = -1.0;
            nn[t.shift(0, a, -1)] = -1.0;
        }
        assert!(check_finite_range(&t, &nn, 1, 5).finite_range);
        nn[t.index_of(&[4, 0])] = 1e-6;
        let bad = check_finite_range(&t, &nn, 1, 5);
        assert!(!bad.finite_range && bad.witness.unwrap().0 == vec![4, 0]);
    }
}
