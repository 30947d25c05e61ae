//! Scaled test functions, lattice Laplace transforms `E[e^{(f_N,φ)}]` and
//! their continuum Gaussian free field limit with diffusion matrix `H`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::gaussian::GaussianSpec;
use crate::potentials::{ModelParams, Potential};
use crate::sampler::{ChainRun, Observable};
use crate::stats::{mean, Blocks, Estimate, MIN_BATCHES};
use crate::thermo::{ChainPlan, MatrixEstimate, MIN_ESS};
use crate::torus::TorusSpec;

/// `a cos(2π⟨k,x⟩) + b sin(2π⟨k,x⟩)` on the unit torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierTerm {
    pub k: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// A real zero-mean finite Fourier series on `(R/Z)^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunction {
    pub terms: Vec<FourierTerm>,
}

impl TestFunction {
    pub fn new(d: usize, terms: Vec<FourierTerm>) -> Result<Self> {
        for t in &terms {
            if t.k.len() != d {
                return Err(Error::Mismatch(format!("mode {:?} is not {d}-dimensional", t.k)));
            }
            if t.k.iter().all(|&c| c == 0) {
                return Err(Error::InvalidParam("the zero mode is excluded (test functions have zero mean)".into()));
            }
        }
        Ok(Self { terms })
    }

    /// `√2 cos(2π⟨k,x⟩)`, unit `L²` norm.
    pub fn cosine_mode(k: &[i64]) -> Result<Self> {
        Self::new(k.len(), vec![FourierTerm { k: k.to_vec(), cos: 2f64.sqrt(), sin: 0.0 }])
    }

    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let (s, c) = (2.0 * PI * t.k.iter().zip(x).map(|(k, x)| *k as f64 * x).sum::<f64>()).sin_cos();
                t.cos * c + t.sin * s
            })
            .sum()
    }

    /// Complex Fourier coefficients `f̂(k)`, terms at `k` and `−k` merged.
    pub fn coefficients(&self) -> BTreeMap<Vec<i64>, (f64, f64)> {
        let mut out: BTreeMap<Vec<i64>, (f64, f64)> = BTreeMap::new();
        for t in &self.terms {
            let neg: Vec<i64> = t.k.iter().map(|c| -c).collect();
            // a cos θ + b sin θ = (a − ib)/2 e^{iθ} + (a + ib)/2 e^{−iθ}
            let e = out.entry(t.k.clone()).or_insert((0.0, 0.0));
            e.0 += 0.5 * t.cos;
            e.1 -= 0.5 * t.sin;
            let e = out.entry(neg).or_insert((0.0, 0.0));
            e.0 += 0.5 * t.cos;
            e.1 += 0.5 * t.sin;
        }
        out
    }

    /// `∫ f² dx`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.coefficients().values().map(|(re, im)| re * re + im * im).sum()
    }
}

/// `f_N(x) = L^{−N(d+2)/2} f(L^{−N}x)` at every lattice site.
pub fn scale_test_function(f: &TestFunction, torus: &TorusSpec) -> Result<ScalarField> {
    let d = torus.d();
    if f.terms.iter().any(|t| t.k.len() != d) {
        return Err(Error::Mismatch("test function dimension differs from torus".into()));
    }
    let side = torus.side() as f64;
    let c = scale_factor(torus);
    let values = (0..torus.volume())
        .map(|i| {
            let x: Vec<f64> = torus.coords(i).iter().map(|&v| v as f64 / side).collect();
            c * f.eval(&x)
        })
        .collect();
    ScalarField::new(torus, values)
}

/// `L^{−N(d+2)/2}`.
pub fn scale_factor(torus: &TorusSpec) -> f64 {
    (torus.side() as f64).powf(-(torus.d() as f64 + 2.0) / 2.0)
}

fn check_spd(h: &DMatrix<f64>) -> Result<()> {
    if h.nrows() != h.ncols() || (h - h.transpose()).abs().max() > 1e-12 * h.abs().max().max(1.0) {
        return Err(Error::InvalidParam("diffusion matrix must be symmetric".into()));
    }
    if SymmetricEigen::new(h.clone()).eigenvalues.min() <= 0.0 {
        return Err(Error::InvalidParam("diffusion matrix must be positive definite".into()));
    }
    Ok(())
}

/// `(f, 𝒞f) = Σ_{k≠0} |f̂(k)|² / (4π²⟨k,Hk⟩)`.
pub fn gff_quadratic_form(h: &DMatrix<f64>, f: &TestFunction) -> Result<f64> {
    check_spd(h)?;
    let d = h.nrows();
    let mut total = 0.0;
    for (k, (re, im)) in f.coefficients() {
        if k.len() != d {
            return Err(Error::Mismatch("mode dimension differs from diffusion matrix".into()));
        }
        let kv = DVector::from_iterator(d, k.iter().map(|&c| c as f64));
        total += (re * re + im * im) / (4.0 * PI * PI * kv.dot(&(h * &kv)));
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactLaplace {
    /// `log E[e^{(f_N,φ)}] = (2β)^{−1}(f_N, C_N f_N)`.
    pub log_value: f64,
    pub value: f64,
    /// Set when `f_N` had a nonzero lattice mean that was projected out.
    pub projected: bool,
}

/// Exact Laplace transform under the Gaussian measure `spec` at inverse
/// temperature `beta`.
pub fn laplace_exact_gaussian(spec: &GaussianSpec, beta: f64, f_n: &ScalarField) -> Result<ExactLaplace> {
    if f_n.spec != *spec.torus() {
        return Err(Error::Mismatch("field and Gaussian measure live on different tori".into()));
    }
    let projected = f_n.sum().abs() > 1e-10 * f_n.values.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);
    let log_value = spec.variance_of(&f_n.values) / (2.0 * beta);
    Ok(ExactLaplace { log_value, value: log_value.exp(), projected })
}

/// Distinct mode representatives of `f` (one of each `±k` pair).
fn distinct_modes(f: &TestFunction) -> Vec<Vec<i64>> {
    let mut out: Vec<Vec<i64>> = Vec::new();
    for t in &f.terms {
        let neg: Vec<i64> = t.k.iter().map(|c| -c).collect();
        if !out.contains(&t.k) && !out.contains(&neg) {
            out.push(t.k.clone());
        }
    }
    out
}

fn mode_name(k: &[i64], part: &str) -> String {
    let ks: Vec<String> = k.iter().map(|c| c.to_string()).collect();
    format!("mode_{part}[{}]", ks.join(","))
}

/// `Σ_x φ(x) cos(2π⟨k,x⟩/L^N)` and the matching sine projection for every
/// mode in `modes`.
pub fn mode_observables(torus: &TorusSpec, modes: &[Vec<i64>]) -> Vec<Observable> {
    let side = torus.side() as f64;
    let mut out = Vec::new();
    for k in modes {
        let phases: Vec<f64> = (0..torus.volume()).map(|i| 2.0 * PI * torus.coords(i).iter().zip(k).map(|(x, k)| (x * k) as f64).sum::<f64>() / side).collect();
        out.push(Observable::Linear { name: mode_name(k, "cos"), weights: phases.iter().map(|p| p.cos()).collect() });
        out.push(Observable::Linear { name: mode_name(k, "sin"), weights: phases.iter().map(|p| p.sin()).collect() });
    }
    out
}

/// Translation orbit of `f`: per translation, the phase `2π⟨k,y⟩/L^N` of
/// each distinct mode. A single mode only needs its distinct phases.
fn orbit(torus: &TorusSpec, modes: &[Vec<i64>]) -> Vec<Vec<f64>> {
    let side = torus.side() as i64;
    if modes.len() == 1 {
        let g = modes[0].iter().fold(side, |g, &k| gcd(g, k.rem_euclid(side)));
        let m = side / g;
        return (0..m).map(|j| vec![2.0 * PI * (j * g) as f64 / side as f64]).collect();
    }
    (0..torus.volume())
        .map(|i| {
            let y = torus.coords(i);
            modes.iter().map(|k| 2.0 * PI * y.iter().zip(k).map(|(a, b)| a * b).sum::<i64>().rem_euclid(side) as f64 / side as f64).collect()
        })
        .collect()
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceMc {
    /// `log mean e^{(f_N,φ)}`.
    pub raw: Estimate,
    /// Same, averaged over the translation orbit of `f_N` in every sample.
    pub translation_averaged: Estimate,
    /// `½ E[(f_N,φ)²]`, using that translation invariance forces
    /// `E[(f_N,φ)] = 0`; averaged over the orbit as well.
    pub cumulant: Estimate,
    /// `mean + ½ var` of the raw linear statistic.
    pub variance_matched: Estimate,
    /// The log-domain estimate used downstream.
    pub chosen: Estimate,
    pub chosen_method: String,
    /// Raw and cumulant estimates differ by more than 3 joint SE.
    pub bias_flag: bool,
    pub variance: f64,
    pub min_ess: f64,
    pub low_ess: bool,
}

/// Relative error above which the cumulant estimate replaces the
/// translation-averaged mean.
pub const RAW_REL_ERROR_LIMIT: f64 = 0.1;

/// Laplace-transform estimators from runs that recorded
/// [`mode_observables`] for every mode of `f`.
pub fn laplace_from_runs(runs: &[ChainRun], torus: &TorusSpec, f: &TestFunction) -> Result<LaplaceMc> {
    let modes = distinct_modes(f);
    if modes.is_empty() {
        let zero = Estimate::new(0.0, 0.0);
        return Ok(LaplaceMc { raw: zero, translation_averaged: zero, cumulant: zero, variance_matched: zero, chosen: zero, chosen_method: "exact".into(), bias_flag: false, variance: 0.0, min_ess: f64::INFINITY, low_ess: false });
    }
    let c = scale_factor(torus);
    // Per mode, coefficients (α, β) with X_y = Σ α (C cos θ + S sin θ) + β (S cos θ − C sin θ).
    let coef: Vec<(f64, f64)> = modes
        .iter()
        .map(|k| {
            let neg: Vec<i64> = k.iter().map(|v| -v).collect();
            f.terms.iter().fold((0.0, 0.0), |(a, b), t| {
                if t.k == *k {
                    (a + c * t.cos, b + c * t.sin)
                } else if t.k == neg {
                    (a + c * t.cos, b - c * t.sin)
                } else {
                    (a, b)
                }
            })
        })
        .collect();
    let orb = orbit(torus, &modes);
    let trig: Vec<Vec<(f64, f64)>> = orb.iter().map(|ph| ph.iter().map(|p| (p.cos(), p.sin())).collect()).collect();
    let mut chains_cols: Vec<Vec<Vec<f64>>> = Vec::new();
    for r in runs {
        let series = |k: &[i64], part: &str| -> Result<&[f64]> {
            r.get(&mode_name(k, part)).map(|s| s.values.as_slice()).ok_or_else(|| Error::Mismatch(format!("run lacks observable {}", mode_name(k, part))))
        };
        let cs: Vec<(&[f64], &[f64])> = modes.iter().map(|k| Ok((series(k, "cos")?, series(k, "sin")?))).collect::<Result<_>>()?;
        let n = cs[0].0.len();
        let mut cols = vec![Vec::with_capacity(n); 5];
        for t in 0..n {
            let x_at = |tr: &[(f64, f64)]| -> f64 {
                cs.iter().zip(&coef).zip(tr).map(|(((cv, sv), (a, b)), (co, si))| a * (cv[t] * co + sv[t] * si) + b * (sv[t] * co - cv[t] * si)).sum()
            };
            let x0 = x_at(&vec![(1.0, 0.0); modes.len()]);
            let (mut e_sum, mut q_sum) = (0.0, 0.0);
            for tr in &trig {
                let x = x_at(tr);
                e_sum += x.exp();
                q_sum += x * x;
            }
            let no = trig.len() as f64;
            cols[0].push(x0.exp());
            cols[1].push(e_sum / no);
            cols[2].push(q_sum / no);
            cols[3].push(x0);
            cols[4].push(x0 * x0);
        }
        chains_cols.push(cols);
    }
    let refs: Vec<Vec<&[f64]>> = chains_cols.iter().map(|c| c.iter().map(|s| s.as_slice()).collect()).collect();
    let blocks = Blocks::from_chains(&refs, MIN_BATCHES);
    let raw = blocks.jackknife(|m| m[0].ln());
    let translation_averaged = blocks.jackknife(|m| m[1].ln());
    let cumulant = blocks.jackknife(|m| 0.5 * m[2]);
    let variance_matched = blocks.jackknife(|m| m[3] + 0.5 * (m[4] - m[3] * m[3]));
    let variance = {
        let all: Vec<f64> = chains_cols.iter().flat_map(|c| c[3].iter().copied()).collect();
        let sq: Vec<f64> = chains_cols.iter().flat_map(|c| c[4].iter().copied()).collect();
        mean(&sq) - mean(&all).powi(2)
    };
    let rel = translation_averaged.se / translation_averaged.mean.abs();
    let (chosen, chosen_method) = if rel <= RAW_REL_ERROR_LIMIT { (translation_averaged, "translation_averaged") } else { (cumulant, "cumulant") };
    let bias_flag = raw.z_score(&cumulant) > 3.0;
    let min_ess = runs.iter().map(|r| r.series.iter().filter(|s| s.name.starts_with("mode_")).map(|s| s.ess).fold(f64::INFINITY, f64::min)).sum::<f64>();
    Ok(LaplaceMc { raw, translation_averaged, cumulant, variance_matched, chosen, chosen_method: chosen_method.into(), bias_flag, variance, min_ess, low_ess: min_ess < MIN_ESS })
}

/// Monte Carlo Laplace transform of `f_N` under the tilted Gibbs measure.
pub fn laplace_mc(v: &Arc<dyn Potential>, params: &ModelParams, torus: &TorusSpec, f: &TestFunction, plan: &ChainPlan) -> Result<LaplaceMc> {
    params.validate(torus.d())?;
    let obs = mode_observables(torus, &distinct_modes(f));
    let runs = crate::sampler::run_chains(v.clone(), torus, params.beta, &params.u, &plan.sampler, &obs, plan.seed, plan.chains)?;
    laplace_from_runs(&runs, torus, f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMeasurement {
    pub k: Vec<i64>,
    /// `m_k = 2β log E[e^{(f^{(k)}_N,φ)}]` for `f^{(k)} = √2 cos(2π⟨k,x⟩)`.
    pub form: Estimate,
    pub method: String,
    pub laplace: LaplaceMc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceFit {
    pub h: MatrixEstimate,
    pub modes: Vec<ModeMeasurement>,
}

/// Solve the weighted least squares problem `⟨k,Hk⟩ ≈ y_k` for symmetric
/// `H`, unknowns in upper-triangular row order.
fn fit_symmetric(d: usize, modes: &[Vec<i64>], y: &[f64], w: &[f64]) -> Result<DMatrix<f64>> {
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let a = DMatrix::from_fn(modes.len(), pairs.len(), |r, c| {
        let (i, j) = pairs[c];
        let v = (modes[r][i] * modes[r][j]) as f64;
        if i == j {
            v
        } else {
            2.0 * v
        }
    });
    let wsq = DMatrix::from_diagonal(&DVector::from_iterator(w.len(), w.iter().copied()));
    let normal = a.transpose() * &wsq * &a;
    let rhs = a.transpose() * &wsq * DVector::from_column_slice(y);
    let sol = normal.clone().cholesky().ok_or_else(|| Error::InvalidParam("mode set is rank deficient for a symmetric fit".into()))?.solve(&rhs);
    let mut h = DMatrix::zeros(d, d);
    for (c, &(i, j)) in pairs.iter().enumerate() {
        h[(i, j)] = sol[c];
        h[(j, i)] = sol[c];
    }
    Ok(h)
}

/// Fit `H` from single-mode Laplace transforms recorded in `runs`.
pub fn covariance_fit_from_runs(runs: &[ChainRun], torus: &TorusSpec, beta: f64, modes: &[Vec<i64>]) -> Result<CovarianceFit> {
    let d = torus.d();
    let needed = d * (d + 1) / 2;
    let mut distinct: Vec<&Vec<i64>> = Vec::new();
    for k in modes {
        if !distinct.contains(&k) {
            distinct.push(k);
        }
    }
    if distinct.len() < needed {
        return Err(Error::InvalidParam(format!("need at least {needed} distinct modes, got {}", distinct.len())));
    }
    let mut meas = Vec::new();
    for k in modes {
        let f = TestFunction::cosine_mode(k)?;
        let l = laplace_from_runs(runs, torus, &f)?;
        let form = Estimate::new(2.0 * beta * l.chosen.mean, 2.0 * beta * l.chosen.se);
        meas.push(ModeMeasurement { k: k.clone(), form, method: l.chosen_method.clone(), laplace: l });
    }
    let to_target = |m: f64| 1.0 / (4.0 * PI * PI * m);
    let y: Vec<f64> = meas.iter().map(|m| to_target(m.form.mean)).collect();
    let w: Vec<f64> = meas.iter().map(|m| (4.0 * PI * PI * m.form.mean * m.form.mean / m.form.se).powi(2)).map(|w| if w.is_finite() { w } else { 1.0 }).collect();
    let h = fit_symmetric(d, modes, &y, &w)?;

    // Jackknife over the same blocks that feed the mode estimates: every
    // mode uses the cumulant or translation-averaged column chosen above.
    let mut cols_per_chain: Vec<Vec<Vec<f64>>> = vec![Vec::new(); runs.len()];
    for m in &meas {
        let name_c = mode_name(&m.k, "cos");
        let name_s = mode_name(&m.k, "sin");
        let amp = scale_factor(torus) * 2f64.sqrt();
        let side = torus.side() as i64;
        let g = m.k.iter().fold(side, |g, &k| gcd(g, k.rem_euclid(side)));
        let nph = side / g;
        let phases: Vec<(f64, f64)> = (0..nph).map(|j| (2.0 * PI * (j * g) as f64 / side as f64).sin_cos()).map(|(s, c)| (c, s)).collect();
        for (r, cols) in runs.iter().zip(cols_per_chain.iter_mut()) {
            let cv = &r.get(&name_c).expect("mode recorded").values;
            let sv = &r.get(&name_s).expect("mode recorded").values;
            let col: Vec<f64> = cv
                .iter()
                .zip(sv)
                .map(|(c, s)| {
                    let xs = phases.iter().map(|(co, si)| amp * (c * co + s * si));
                    if m.method == "cumulant" {
                        xs.map(|x| x * x).sum::<f64>() / nph as f64
                    } else {
                        xs.map(|x| x.exp()).sum::<f64>() / nph as f64
                    }
                })
                .collect();
            cols.push(col);
        }
    }
    let refs: Vec<Vec<&[f64]>> = cols_per_chain.iter().map(|c| c.iter().map(|s| s.as_slice()).collect()).collect();
    let blocks = Blocks::from_chains(&refs, MIN_BATCHES);
    let methods: Vec<bool> = meas.iter().map(|m| m.method == "cumulant").collect();
    let fit_at = |mm: &[f64]| -> Option<DMatrix<f64>> {
        let yy: Vec<f64> = mm.iter().zip(&methods).map(|(v, &cum)| to_target(2.0 * beta * if cum { 0.5 * v } else { v.ln() })).collect();
        fit_symmetric(d, modes, &yy, &w).ok()
    };
    let mut se = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let e = blocks.jackknife(|mm| fit_at(mm).map_or(f64::NAN, |h| h[(i, j)]));
            se[i][j] = e.se;
            se[j][i] = e.se;
        }
    }
    let mean_rows = (0..d).map(|i| (0..d).map(|j| h[(i, j)]).collect()).collect();
    let min_ess = meas.iter().map(|m| m.laplace.min_ess).fold(f64::INFINITY, f64::min);
    Ok(CovarianceFit { h: MatrixEstimate { mean: mean_rows, se, min_ess, low_ess: min_ess < MIN_ESS }, modes: meas })
}

/// Run chains recording the requested modes and fit `H`.
pub fn covariance_fit(v: &Arc<dyn Potential>, params: &ModelParams, torus: &TorusSpec, modes: &[Vec<i64>], plan: &ChainPlan) -> Result<CovarianceFit> {
    params.validate(torus.d())?;
    let obs = mode_observables(torus, modes);
    let runs = crate::sampler::run_chains(v.clone(), torus, params.beta, &params.u, &plan.sampler, &obs, plan.seed, plan.chains)?;
    covariance_fit_from_runs(&runs, torus, params.beta, modes)
}
