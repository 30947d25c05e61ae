//! Surface tension `σ_{N,β}(u) = −(βL^{dN})^{−1} log Z_N(u)` and its
//! derivatives in the tilt: closed forms for quadratic potentials, Monte
//! Carlo estimators otherwise.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianSpec;
use crate::potentials::{ModelParams, Potential};
use crate::sampler::{run_chains, ChainRun, Observable, SamplerConfig};
use crate::stats::{batch_means_se, gauss_legendre, mean, Blocks, Estimate, MIN_BATCHES};
use crate::torus::TorusSpec;

/// Estimates backed by fewer effective samples than this are flagged.
pub const MIN_ESS: f64 = 100.0;

/// How to run the chains behind one estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainPlan {
    pub sampler: SamplerConfig,
    pub chains: usize,
    pub seed: u64,
}

impl ChainPlan {
    pub fn new(sampler: SamplerConfig, chains: usize, seed: u64) -> Self {
        Self { sampler, chains, seed }
    }

    fn run(&self, v: &Arc<dyn Potential>, torus: &TorusSpec, beta: f64, u: &[f64], obs: &[Observable]) -> Result<Vec<ChainRun>> {
        if self.chains == 0 {
            return Err(Error::InvalidParam("at least one chain is required".into()));
        }
        run_chains(v.clone(), torus, beta, u, &self.sampler, obs, self.seed, self.chains)
    }
}

/// `σ_{N,β}(u) = ½⟨u,Mu⟩ + (βL^{dN})^{−1}·½ Σ_{p≠0} log(βλ_M(p)/2π)` for
/// `V(z) = ½⟨z,Mz⟩`.
pub fn sigma_exact_quadratic(m: &DMatrix<f64>, beta: f64, torus: &TorusSpec, u: &[f64]) -> Result<f64> {
    if u.len() != torus.d() {
        return Err(Error::Mismatch("tilt dimension differs from torus dimension".into()));
    }
    let spec = GaussianSpec::new(torus, m)?;
    let vol = torus.volume() as f64;
    let fluct: f64 = spec.multipliers().iter().skip(1).map(|l| 0.5 * (beta * l / (2.0 * std::f64::consts::PI)).ln()).sum();
    let uv = nalgebra::DVector::from_column_slice(u);
    Ok(0.5 * uv.dot(&(m * &uv)) + fluct / (beta * vol))
}

/// Hessian of the exact quadratic surface tension by central second
/// differences of the closed form (exact up to rounding, since the tilt
/// dependence is quadratic).
pub fn sigma_exact_hessian(m: &DMatrix<f64>, beta: f64, torus: &TorusSpec, u: &[f64]) -> Result<DMatrix<f64>> {
    let d = torus.d();
    let h = 0.5;
    let at = |shift: &[(usize, f64)]| -> Result<f64> {
        let mut w = u.to_vec();
        for &(i, s) in shift {
            w[i] += s;
        }
        sigma_exact_quadratic(m, beta, torus, &w)
    };
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let pp = at(&[(i, h), (j, h)])?;
            let pm = at(&[(i, h), (j, -h)])?;
            let mp = at(&[(i, -h), (j, h)])?;
            let mm = at(&[(i, -h), (j, -h)])?;
            out[(i, j)] = (pp - pm - mp + mm) / (4.0 * h * h);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorEstimate {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub min_ess: f64,
    pub low_ess: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixEstimate {
    pub mean: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub min_ess: f64,
    pub low_ess: bool,
}

impl MatrixEstimate {
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.mean.len();
        DMatrix::from_fn(d, d, |i, j| self.mean[i][j])
    }
    pub fn errors(&self) -> DMatrix<f64> {
        let d = self.se.len();
        DMatrix::from_fn(d, d, |i, j| self.se[i][j])
    }
}

/// Mean over chains of per-chain means, with the standard error of that
/// average from per-chain batch means.
fn pooled(series: &[&[f64]]) -> Estimate {
    let means: Vec<f64> = series.iter().map(|s| mean(s)).collect();
    let var: f64 = series.iter().map(|s| batch_means_se(s, MIN_BATCHES).powi(2)).sum();
    Estimate::new(mean(&means), var.sqrt() / series.len() as f64)
}

fn min_ess(runs: &[ChainRun]) -> f64 {
    let per_run = |r: &ChainRun| r.series.iter().map(|s| s.ess).fold(f64::INFINITY, f64::min);
    runs.iter().map(per_run).sum()
}

/// `∂_{u_i}σ = L^{−dN} E[Σ_x ∂_iV(∇φ(x)+u)]`.
pub fn grad_sigma_mc(v: &Arc<dyn Potential>, params: &ModelParams, torus: &TorusSpec, plan: &ChainPlan) -> Result<VectorEstimate> {
    params.validate(torus.d())?;
    let obs: Vec<Observable> = (0..torus.d()).map(Observable::ForceSum).collect();
    let runs = plan.run(v, torus, params.beta, &params.u, &obs)?;
    Ok(gradient_from_runs(&runs, torus))
}

/// Gradient estimate from runs whose first `d` observables are the force
/// sums.
pub fn gradient_from_runs(runs: &[ChainRun], torus: &TorusSpec) -> VectorEstimate {
    let vol = torus.volume() as f64;
    let (mut m, mut s) = (Vec::new(), Vec::new());
    for i in 0..torus.d() {
        let name = Observable::ForceSum(i).name();
        let series: Vec<&[f64]> = runs.iter().map(|r| r.get(&name).expect("force sum recorded").values.as_slice()).collect();
        let e = pooled(&series);
        m.push(e.mean / vol);
        s.push(e.se / vol);
    }
    let ess = min_ess(runs);
    VectorEstimate { mean: m, se: s, min_ess: ess, low_ess: ess < MIN_ESS }
}

/// Observables needed by [`hessian_from_runs`].
pub fn fluctuation_observables(d: usize) -> Vec<Observable> {
    let mut obs: Vec<Observable> = (0..d).map(Observable::ForceSum).collect();
    for i in 0..d {
        for j in i..d {
            obs.push(Observable::CurvatureSum(i, j));
        }
    }
    obs
}

/// `∂²σ/∂u_i∂u_j = L^{−dN}(E[Σ_x ∂_i∂_jV] − β Cov(Σ_x ∂_iV, Σ_x ∂_jV))`.
pub fn hessian_fluctuation(v: &Arc<dyn Potential>, params: &ModelParams, torus: &TorusSpec, plan: &ChainPlan) -> Result<MatrixEstimate> {
    params.validate(torus.d())?;
    let runs = plan.run(v, torus, params.beta, &params.u, &fluctuation_observables(torus.d()))?;
    Ok(hessian_from_runs(&runs, torus, params.beta))
}

/// Fluctuation Hessian with a delete-one-block jackknife over all chains
/// (20 blocks per chain).
pub fn hessian_from_runs(runs: &[ChainRun], torus: &TorusSpec, beta: f64) -> MatrixEstimate {
    let d = torus.d();
    let vol = torus.volume() as f64;
    let get = |r: &ChainRun, o: Observable| r.get(&o.name()).expect("observable recorded").values.clone();
    // Center the force sums first so the covariance has no cancellation.
    let centers: Vec<f64> = (0..d)
        .map(|i| {
            let all: Vec<f64> = runs.iter().flat_map(|r| get(r, Observable::ForceSum(i))).collect();
            mean(&all)
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..d {
        for j in i..d {
            pairs.push((i, j));
        }
    }
    // Series layout: curvature (pairs), centered force (d), products (pairs).
    let per_chain: Vec<Vec<Vec<f64>>> = runs
        .iter()
        .map(|r| {
            let forces: Vec<Vec<f64>> = (0..d).map(|i| get(r, Observable::ForceSum(i)).iter().map(|x| x - centers[i]).collect()).collect();
            let mut cols: Vec<Vec<f64>> = pairs.iter().map(|&(i, j)| get(r, Observable::CurvatureSum(i, j))).collect();
            cols.extend(forces.iter().cloned());
            for &(i, j) in &pairs {
                cols.push(forces[i].iter().zip(&forces[j]).map(|(a, b)| a * b).collect());
            }
            cols
        })
        .collect();
    let chains: Vec<Vec<&[f64]>> = per_chain.iter().map(|c| c.iter().map(|s| s.as_slice()).collect()).collect();
    let blocks = Blocks::from_chains(&chains, MIN_BATCHES);
    let np = pairs.len();
    let mut mean_m = vec![vec![0.0; d]; d];
    let mut se_m = vec![vec![0.0; d]; d];
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let est = blocks.jackknife(|m| (m[p] - beta * (m[np + d + p] - m[np + i] * m[np + j])) / vol);
        mean_m[i][j] = est.mean;
        mean_m[j][i] = est.mean;
        se_m[i][j] = est.se;
        se_m[j][i] = est.se;
    }
    let ess = min_ess(runs);
    MatrixEstimate { mean: mean_m, se: se_m, min_ess: ess, low_ess: ess < MIN_ESS }
}

/// Finite-difference Hessian of `grad_sigma_mc`: central differences with
/// step `h`, both sides of each pair run on the same seeds. With
/// `richardson`, combines steps `h` and `h/2` to cancel the `O(h²)` term.
pub fn hessian_finite_difference(v: &Arc<dyn Potential>, params: &ModelParams, torus: &TorusSpec, plan: &ChainPlan, h: f64, richardson: bool) -> Result<MatrixEstimate> {
    params.validate(torus.d())?;
    if !(h > 0.0) {
        return Err(Error::InvalidParam("finite-difference step must be positive".into()));
    }
    let d = torus.d();
    let vol = torus.volume() as f64;
    let obs: Vec<Observable> = (0..d).map(Observable::ForceSum).collect();
    let steps: Vec<f64> = if richardson { vec![h, 0.5 * h] } else { vec![h] };
    let mut jobs = Vec::new();
    for j in 0..d {
        for &s in &steps {
            for sign in [1.0, -1.0] {
                let mut u = params.u.clone();
                u[j] += sign * s;
                jobs.push(u);
            }
        }
    }
    let runs: Vec<Vec<ChainRun>> = jobs.par_iter().map(|u| plan.run(v, torus, params.beta, u, &obs)).collect::<Result<_>>()?;
    let force = |run: &ChainRun, i: usize| run.get(&Observable::ForceSum(i).name()).expect("force sum recorded").values.clone();
    // Per chain, the sample-wise derivative series of ∂_iσ along axis j.
    let deriv = |i: usize, j: usize, c: usize| -> Vec<f64> {
        let base = j * steps.len() * 2;
        let diff = |k: usize, s: f64| -> Vec<f64> {
            let p = force(&runs[base + 2 * k][c], i);
            let m = force(&runs[base + 2 * k + 1][c], i);
            p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * s * vol)).collect()
        };
        if richardson {
            let coarse = diff(0, steps[0]);
            let fine = diff(1, steps[1]);
            fine.iter().zip(&coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect()
        } else {
            diff(0, steps[0])
        }
    };
    let mut mean_m = vec![vec![0.0; d]; d];
    let mut se_m = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let series: Vec<Vec<f64>> = (0..plan.chains)
                .map(|c| {
                    let a = deriv(i, j, c);
                    let b = deriv(j, i, c);
                    a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect()
                })
                .collect();
            let refs: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
            let e = pooled(&refs);
            mean_m[i][j] = e.mean;
            mean_m[j][i] = e.mean;
            se_m[i][j] = e.se;
            se_m[j][i] = e.se;
        }
    }
    let ess = runs.iter().map(|r| min_ess(r)).fold(f64::INFINITY, f64::min);
    Ok(MatrixEstimate { mean: mean_m, se: se_m, min_ess: ess, low_ess: ess < MIN_ESS })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationEstimate {
    /// `σ(end) − σ(start)`.
    pub value: f64,
    /// Monte Carlo standard error.
    pub se: f64,
    /// Size of the highest Legendre coefficient of the integrand, summed over
    /// segments; a decay indicator for the quadrature, not part of `se`.
    pub quadrature_indicator: f64,
    pub nodes: Vec<(Vec<f64>, VectorEstimate)>,
}

/// Thermodynamic integration of `D_uσ` along the polyline `path` with
/// Gauss–Legendre quadrature of `order` nodes per segment.
pub fn sigma_ti(v: &Arc<dyn Potential>, params: &ModelParams, torus: &TorusSpec, path: &[Vec<f64>], order: usize, plan: &ChainPlan) -> Result<IntegrationEstimate> {
    if order < 2 {
        return Err(Error::InvalidParam(format!("quadrature order must be at least 2, got {order}")));
    }
    if path.len() < 2 {
        return Err(Error::InvalidParam("path needs at least two points".into()));
    }
    let d = torus.d();
    if path.iter().any(|p| p.len() != d) {
        return Err(Error::Mismatch("path points must have the torus dimension".into()));
    }
    params.validate(d)?;
    let rule = gauss_legendre(order);
    let mut points = Vec::new();
    for seg in path.windows(2) {
        for &(t, w) in &rule {
            let u: Vec<f64> = seg[0].iter().zip(&seg[1]).map(|(a, b)| a + t * (b - a)).collect();
            let du: Vec<f64> = seg[0].iter().zip(&seg[1]).map(|(a, b)| b - a).collect();
            points.push((u, du, w, t));
        }
    }
    let grads: Vec<VectorEstimate> = points
        .par_iter()
        .enumerate()
        .map(|(k, (u, ..))| {
            let mut p = params.clone();
            p.u = u.clone();
            let mut node_plan = plan.clone();
            node_plan.seed = plan.seed.wrapping_add(k as u64);
            grad_sigma_mc(v, &p, torus, &node_plan)
        })
        .collect::<Result<_>>()?;
    let (mut value, mut var, mut indicator) = (0.0, 0.0, 0.0);
    for (seg, chunk) in points.chunks(order).zip(grads.chunks(order)) {
        let mut top = 0.0;
        for ((_, du, w, t), g) in seg.iter().zip(chunk) {
            let f: f64 = du.iter().zip(&g.mean).map(|(a, b)| a * b).sum();
            let sf: f64 = du.iter().zip(&g.se).map(|(a, b)| (a * b).powi(2)).sum();
            value += w * f;
            var += w * w * sf;
            top += w * f * legendre(order - 1, 2.0 * t - 1.0);
        }
        indicator += ((2 * order - 1) as f64 * top).abs();
    }
    let nodes = points.into_iter().zip(grads).map(|((u, ..), g)| (u, g)).collect();
    Ok(IntegrationEstimate { value, se: var.sqrt(), quadrature_indicator: indicator, nodes })
}

fn legendre(n: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return 1.0;
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceTensionReport {
    pub u: Vec<f64>,
    pub beta: f64,
    pub n: usize,
    /// `σ(u) − σ(0)` (absolute for quadratic potentials).
    pub sigma: Option<Estimate>,
    pub gradient: VectorEstimate,
    pub hessian: MatrixEstimate,
    pub methods: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_sigma_examples() {
        let t = TorusSpec::new(5, 1, 1).unwrap();
        let m = DMatrix::from_element(1, 1, 1.0);
        let s = sigma_exact_quadratic(&m, 1.0, &t, &[0.0]).unwrap();
        let expect: f64 = (1..5).map(|k| 0.5 * ((2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / 5.0).cos()) / (2.0 * std::f64::consts::PI)).ln()).sum::<f64>() / 5.0;
        assert!((s - expect).abs() < 1e-14);

        let t2 = TorusSpec::new(5, 1, 2).unwrap();
        let m2 = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let a = sigma_exact_quadratic(&m2, 1.0, &t2, &[0.0, 0.0]).unwrap();
        let b = sigma_exact_quadratic(&m2, 1.0, &t2, &[1.0, 0.0]).unwrap();
        assert!((b - a - 1.5).abs() < 1e-13);
        let h = sigma_exact_hessian(&m2, 1.0, &t2, &[0.2, -0.1]).unwrap();
        assert!((h - m2).abs().max() < 1e-10);
    }

    #[test]
    fn quadrature_order_one_rejected() {
        let t = TorusSpec::new(5, 1, 2).unwrap();
        let v: Arc<dyn Potential> = Arc::new(crate::potentials::Quadratic::new(DMatrix::identity(2, 2)).unwrap());
        let plan = ChainPlan::new(SamplerConfig::default(), 1, 0);
        let r = sigma_ti(&v, &ModelParams::new(1.0, vec![0.0, 0.0]), &t, &[vec![0.0, 0.0], vec![0.1, 0.0]], 1, &plan);
        assert!(matches!(r, Err(Error::InvalidParam(_))));
    }
}
