//! Monte Carlo estimators checked against exact Gaussian answers for
//! quadratic potentials, plus checkpoint and reversibility contracts.

use std::sync::Arc;

use gradlab_core::fields::ScalarField;
use gradlab_core::gaussian::GaussianSpec;
use gradlab_core::potentials::{CosinePerturbed, ModelParams, Potential, Quadratic};
use gradlab_core::sampler::{continue_chain, metropolis_accept, run_chain, Chain, Checkpoint, Observable, SamplerConfig};
use gradlab_core::scaling::{laplace_exact_gaussian, laplace_mc, scale_test_function, TestFunction};
use gradlab_core::stats::{Blocks, MIN_BATCHES};
use gradlab_core::thermo::{grad_sigma_mc, hessian_fluctuation, sigma_ti, ChainPlan};
use gradlab_core::torus::TorusSpec;
use nalgebra::DMatrix;

fn identity_potential() -> Arc<dyn Potential> {
    Arc::new(Quadratic::new(DMatrix::identity(2, 2)).unwrap())
}

fn small() -> TorusSpec {
    TorusSpec::new(5, 1, 2).unwrap()
}

fn local_only(sweeps: usize) -> SamplerConfig {
    // Local moves alone, so these oracles exercise the Metropolis sweep itself.
    SamplerConfig { sweeps, burn_in: 500, global_every: None, ..Default::default() }
}

#[test]
fn plane_wave_variance_matches_gaussian() {
    let t = small();
    let beta = 2.0;
    let f = scale_test_function(&TestFunction::cosine_mode(&[1, 0]).unwrap(), &t).unwrap();
    let obs = [Observable::Linear { name: "wave".into(), weights: f.values.clone() }];
    let mut chains = Vec::new();
    for s in 0..4 {
        let r = run_chain(identity_potential(), &t, beta, &[0.0, 0.0], &local_only(20_500), &obs, 11, s).unwrap();
        let x = r.series[0].values.clone();
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        chains.push(vec![x, sq]);
    }
    let refs: Vec<Vec<&[f64]>> = chains.iter().map(|c| c.iter().map(|s| s.as_slice()).collect()).collect();
    let var = Blocks::from_chains(&refs, MIN_BATCHES).jackknife(|m| m[1] - m[0] * m[0]);
    let exact = GaussianSpec::new(&t, &DMatrix::identity(2, 2)).unwrap().variance_of(&f.values) / beta;
    assert!((var.mean - exact).abs() < 3.0 * var.se, "{var:?} vs {exact}");
}

#[test]
fn equipartition_and_force_sum() {
    let t = small();
    let beta = 1.5;
    let u = [0.2, -0.1];
    let obs = [Observable::Energy, Observable::ForceSum(0), Observable::ForceSum(1)];
    let r0 = run_chain(identity_potential(), &t, beta, &[0.0, 0.0], &local_only(20_500), &obs, 5, 0).unwrap();
    let e = &r0.series[0];
    let exact = (t.volume() as f64 - 1.0) / (2.0 * beta);
    assert!((e.mean() - exact).abs() < 3.0 * e.se(), "{} ± {} vs {exact}", e.mean(), e.se());
    let r = run_chain(identity_potential(), &t, beta, &u, &local_only(2_000), &obs, 5, 1).unwrap();
    for i in 0..2 {
        let s = &r.series[1 + i];
        // Σ_x ∇φ = 0 makes the force sum constant, not just right on average.
        assert!((s.mean() - 25.0 * u[i]).abs() < 1e-9);
    }
}

#[test]
fn quadratic_thermo_estimators() {
    let t = small();
    let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
    let v: Arc<dyn Potential> = Arc::new(Quadratic::new(m.clone()).unwrap());
    let params = ModelParams::new(1.0, vec![0.1, 0.05]);
    let plan = ChainPlan::new(SamplerConfig { sweeps: 1_200, burn_in: 200, ..Default::default() }, 2, 3);
    let g = grad_sigma_mc(&v, &params, &t, &plan).unwrap();
    assert!((g.mean[0] - 0.3).abs() < 1e-10 && (g.mean[1] - 0.05).abs() < 1e-10);
    let h = hessian_fluctuation(&v, &params, &t, &plan).unwrap();
    assert!((h.matrix() - &m).abs().max() < 1e-10);
    let ti = sigma_ti(&v, &params, &t, &[vec![0.0, 0.0], vec![0.1, 0.05]], 2, &plan).unwrap();
    let exact = 0.5 * (3.0 * 0.01 + 0.0025);
    assert!((ti.value - exact).abs() <= (3.0 * ti.se).max(1e-10));
    let back = sigma_ti(&v, &params, &t, &[vec![0.1, 0.05], vec![0.0, 0.0]], 2, &plan).unwrap();
    assert!((back.value + ti.value).abs() <= (3.0 * (ti.se + back.se)).max(1e-10));
}

#[test]
fn zero_tilt_gradient_vanishes_for_even_potential() {
    let t = small();
    let v: Arc<dyn Potential> = Arc::new(CosinePerturbed::new(0.3, vec![1.0, 0.0]).unwrap());
    let params = ModelParams::new(5.0, vec![0.0, 0.0]);
    let plan = ChainPlan::new(SamplerConfig { sweeps: 4_200, burn_in: 200, ..Default::default() }, 2, 8);
    let g = grad_sigma_mc(&v, &params, &t, &plan).unwrap();
    for i in 0..2 {
        assert!(g.mean[i].abs() <= (3.0 * g.se[i]).max(1e-12), "{g:?}");
    }
    let h = hessian_fluctuation(&v, &params, &t, &plan).unwrap();
    assert!(h.mean[0][0] < 1.3 && h.mean[0][1].abs() <= 3.0 * h.se[0][1] + 1e-12);
}

#[test]
fn laplace_mc_matches_exact_for_quadratic() {
    let t = small();
    let beta = 1.0;
    let f = TestFunction::cosine_mode(&[1, 0]).unwrap();
    let plan = ChainPlan::new(SamplerConfig { sweeps: 5_200, burn_in: 200, ..Default::default() }, 2, 21);
    let mc = laplace_mc(&identity_potential(), &ModelParams::new(beta, vec![0.0, 0.0]), &t, &f, &plan).unwrap();
    let spec = GaussianSpec::new(&t, &DMatrix::identity(2, 2)).unwrap();
    let exact = laplace_exact_gaussian(&spec, beta, &scale_test_function(&f, &t).unwrap()).unwrap();
    assert!((mc.chosen.mean - exact.log_value).abs() < 3.0 * mc.chosen.se, "{mc:?} vs {exact:?}");
    let neg = TestFunction { terms: vec![gradlab_core::scaling::FourierTerm { k: vec![1, 0], cos: -(2f64.sqrt()), sin: 0.0 }] };
    let mc_neg = laplace_mc(&identity_potential(), &ModelParams::new(beta, vec![0.0, 0.0]), &t, &neg, &plan).unwrap();
    assert!(mc.chosen.z_score(&mc_neg.chosen) < 3.0);
}

#[test]
fn exact_laplace_is_tilt_independent() {
    // The tilt only shifts H by a constant for quadratic V, so the law of φ
    // and hence the exact transform never see it; the spec carries no tilt.
    let t = small();
    let spec = GaussianSpec::new(&t, &DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0])).unwrap();
    let f = scale_test_function(&TestFunction::cosine_mode(&[1, 1]).unwrap(), &t).unwrap();
    let a = laplace_exact_gaussian(&spec, 1.0, &f).unwrap();
    assert!(!a.projected && a.value > 1.0);
}

#[test]
fn resumed_chain_equals_uninterrupted_chain() {
    let t = small();
    let v: Arc<dyn Potential> = Arc::new(CosinePerturbed::new(0.3, vec![1.0, 0.0]).unwrap());
    let u = [0.1, 0.0];
    let full_cfg = SamplerConfig { sweeps: 300, burn_in: 100, ..Default::default() };
    let obs = [Observable::Energy];
    let full = run_chain(v.clone(), &t, 5.0, &u, &full_cfg, &obs, 42, 3).unwrap();

    let mut chain = Chain::new(v.clone(), &t, 5.0, &u, &full_cfg, 42, 3).unwrap();
    for _ in 0..170 {
        chain.sweep();
    }
    let dir = std::env::temp_dir().join(format!("gradlab-ck-{}", std::process::id()));
    chain.checkpoint().save(&dir, "chain").unwrap();
    let restored = Chain::restore(v, 5.0, &u, &full_cfg, &Checkpoint::load(&dir, "chain").unwrap()).unwrap();
    let resumed = continue_chain(restored, &full_cfg, &obs).unwrap();
    assert_eq!(resumed.checkpoint.phi, full.checkpoint.phi);
    assert_eq!(resumed.checkpoint.meta, full.checkpoint.meta);
    assert_eq!(&full.series[0].values[70..], &resumed.series[0].values[..]);

    // A flipped byte in the field snapshot must be caught.
    let bin = dir.join("chain.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&bin, bytes).unwrap();
    assert!(matches!(Checkpoint::load(&dir, "chain"), Err(gradlab_core::Error::Checkpoint(_))));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn zero_sum_drift_after_a_million_updates() {
    let t = small();
    let v: Arc<dyn Potential> = Arc::new(CosinePerturbed::new(0.3, vec![1.0, 0.0]).unwrap());
    let cfg = SamplerConfig { sweeps: 40_000, burn_in: 100, ..Default::default() };
    let mut chain = Chain::new(v, &t, 2.0, &[0.1, 0.0], &cfg, 1, 0).unwrap();
    for _ in 0..40_000 {
        chain.sweep();
    }
    assert!(chain.field().sum().abs() < 1e-9);
}

/// Two sites carrying `(t, −t)` on a discretized grid of `t`, with nearest
/// neighbour proposals and the production acceptance rule integrated over
/// a fine grid of uniforms. The stationary vector must be the Gibbs weight.
#[test]
fn discretized_two_site_detailed_balance() {
    let v = CosinePerturbed::new(0.8, vec![1.0]).unwrap();
    let beta = 1.7;
    let grid: Vec<f64> = (-30..=30).map(|i| i as f64 * 0.05).collect();
    let energy = |t: f64| v.value(&[2.0 * t]) + v.value(&[-2.0 * t]);
    let n = grid.len();
    let uniforms: Vec<f64> = (0..4000).map(|j| (j as f64 + 0.5) / 4000.0).collect();
    let accept = |from: usize, to: usize| -> f64 {
        let dh = energy(grid[to]) - energy(grid[from]);
        uniforms.iter().filter(|&&u| metropolis_accept(dh, beta, u)).count() as f64 / uniforms.len() as f64
    };
    let mut p = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut stay = 1.0;
        for j in [i.wrapping_sub(1), i + 1] {
            if j < n {
                let a = 0.5 * accept(i, j);
                p[(i, j)] = a;
                stay -= a;
            }
        }
        p[(i, i)] = stay;
    }
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let next: Vec<f64> = (0..n).map(|j| (0..n).map(|i| pi[i] * p[(i, j)]).sum()).collect();
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    let z: f64 = grid.iter().map(|&t| (-beta * energy(t)).exp()).sum();
    for (k, &t) in grid.iter().enumerate() {
        assert!((pi[k] - (-beta * energy(t)).exp() / z).abs() < 1e-3);
    }
}

#[test]
fn hamiltonian_rejects_nonzero_sum() {
    let t = small();
    let phi = ScalarField::new(&t, vec![1.0; 25]).unwrap();
    assert!(gradlab_core::sampler::hamiltonian(&phi, identity_potential().as_ref(), &[0.0, 0.0]).is_err());
}
