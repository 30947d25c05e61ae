use std::sync::Arc;

use gradlab_core::fields::{gradient_map, is_gradient_field, project_gradient, ScalarField, VectorField};
use gradlab_core::gaussian::{
    check_finite_range, covariance_kernel, gradient_covariance_matrix, quad_exp_integral, sample_from_kernel, scalar_covariance_matrix, spectral_band_decomposition, CovarianceKernel, GaussianSpec,
};
use gradlab_core::potentials::{k_function, u_function, CosinePerturbed, GaussianMixtureLog, ModelParams, Potential, Quadratic};
use gradlab_core::sampler::{hamiltonian, hamiltonian_rewritten};
use gradlab_core::scaling::{gff_quadratic_form, FourierTerm, TestFunction};
use gradlab_core::stats::{Blocks, MIN_BATCHES};
use gradlab_core::torus::{backward_diff, dot, forward_diff, TorusSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn torus(d: usize) -> TorusSpec {
    TorusSpec::new(5, 1, d).unwrap()
}

fn field(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 5usize.pow(d as u32))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn wrap_is_idempotent_and_distance_translation_invariant(
        x in prop::collection::vec(-200i64..200, 2),
        y in prop::collection::vec(-200i64..200, 2),
        s in prop::collection::vec(-200i64..200, 2),
    ) {
        let t = TorusSpec::new(7, 2, 2).unwrap();
        let w = t.wrap(&x);
        prop_assert_eq!(t.wrap(w.coords()), w.clone());
        let xs: Vec<i64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
        let ys: Vec<i64> = y.iter().zip(&s).map(|(a, b)| a + b).collect();
        let d0 = t.distance(&t.wrap(&x), &t.wrap(&y)).unwrap();
        prop_assert_eq!(d0, t.distance(&t.wrap(&xs), &t.wrap(&ys)).unwrap());
        prop_assert_eq!(d0, t.distance(&t.wrap(&y), &t.wrap(&x)).unwrap());
        prop_assert!(d0 <= t.half());
    }

    #[test]
    fn adjointness_d1(f in field(1), g in field(1)) { check_adjoint(1, &f, &g)?; }
    #[test]
    fn adjointness_d2(f in field(2), g in field(2)) { check_adjoint(2, &f, &g)?; }
    #[test]
    fn adjointness_d3(f in field(3), g in field(3)) { check_adjoint(3, &f, &g)?; }

    #[test]
    fn derivatives_commute_and_telescope(f in field(2)) {
        let t = torus(2);
        let a = forward_diff(&t, &forward_diff(&t, &f, 1).unwrap(), 0).unwrap();
        let b = forward_diff(&t, &forward_diff(&t, &f, 0).unwrap(), 1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for i in 0..2 {
            let s: f64 = forward_diff(&t, &f, i).unwrap().iter().sum();
            prop_assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn projector_splits_orthogonally(flat in prop::collection::vec(-2.0..2.0f64, 50)) {
        let t = torus(2);
        let v = VectorField::from_flat(&t, &flat).unwrap();
        let (o, perp) = project_gradient(&v);
        prop_assert!(o.inner(&perp).abs() < 1e-10);
        prop_assert!(is_gradient_field(&o));
        let (oo, _) = project_gradient(&o);
        prop_assert!(oo.sub(&o).norm_sq().sqrt() < 1e-10);
    }

    #[test]
    fn gradients_are_members(f in field(2)) {
        let phi = ScalarField::new(&torus(2), f).unwrap().centered();
        let g = gradient_map(&phi).unwrap();
        prop_assert!(is_gradient_field(&g));
    }

    #[test]
    fn hamiltonian_forms_agree(f in field(2), u0 in -0.5..0.5f64, u1 in -0.5..0.5f64, a in 0.0..0.5f64) {
        let phi = ScalarField::new(&torus(2), f).unwrap().centered();
        let v = CosinePerturbed::new(a, vec![1.0, 0.0]).unwrap();
        let h1 = hamiltonian(&phi, &v, &[u0, u1]).unwrap();
        let h2 = hamiltonian_rewritten(&phi, &v, &[u0, u1]).unwrap();
        prop_assert!((h1 - h2).abs() <= 1e-9 * h1.abs().max(1.0));
    }

    #[test]
    fn u_function_vanishes_to_first_order(u0 in -1.0..1.0f64, u1 in -1.0..1.0f64, p in 0.1..0.9f64) {
        let v = GaussianMixtureLog::new(2, p, 1.0, 2.0).unwrap();
        let u = [u0, u1];
        prop_assert!(u_function(&v, &[0.0, 0.0], &u).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..2 {
            let mut zp = [0.0, 0.0];
            let mut zm = [0.0, 0.0];
            zp[i] = h;
            zm[i] = -h;
            let g = (u_function(&v, &zp, &u) - u_function(&v, &zm, &u)) / (2.0 * h);
            prop_assert!(g.abs() < 1e-6);
        }
    }

    #[test]
    fn quadratic_k_function_vanishes(z0 in -5.0..5.0f64, z1 in -5.0..5.0f64, m11 in 0.5..3.0f64, m12 in -0.3..0.3f64) {
        let v = Quadratic::new(DMatrix::from_row_slice(2, 2, &[m11, m12, m12, 1.0])).unwrap();
        let params = ModelParams::new(1.0, vec![0.2, -0.4]);
        prop_assert!(k_function(&v, &params, &[z0, z1]).abs() < 1e-12);
    }

    #[test]
    fn analytic_hessian_matches_differences(z0 in -2.0..2.0f64, z1 in -2.0..2.0f64, a in 0.0..0.5f64) {
        let v = CosinePerturbed::new(a, vec![0.6, 0.8]).unwrap();
        let z = [z0, z1];
        let h = v.hessian(&z);
        let e = 1e-4;
        for i in 0..2 {
            for j in 0..2 {
                let shifted = |si: f64, sj: f64| {
                    let mut w = z;
                    w[i] += si;
                    w[j] += sj;
                    v.value(&w)
                };
                let fd = (shifted(e, e) - shifted(e, -e) - shifted(-e, e) + shifted(-e, -e)) / (4.0 * e * e);
                prop_assert!((fd - h[(i, j)]).abs() <= 1e-6 * h[(i, j)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn gff_form_is_homogeneous(a in -2.0..2.0f64, b in -2.0..2.0f64, s in 0.1..10.0f64, k0 in -3i64..3, k1 in 1i64..3) {
        let f = TestFunction::new(2, vec![FourierTerm { k: vec![k0, k1], cos: a, sin: b }, FourierTerm { k: vec![1, 0], cos: 1.0, sin: 0.0 }]).unwrap();
        let h = DMatrix::from_row_slice(2, 2, &[1.3, 0.2, 0.2, 0.9]);
        let base = gff_quadratic_form(&h, &f).unwrap();
        let scaled = gff_quadratic_form(&(&h * s), &f).unwrap();
        prop_assert!((scaled * s - base).abs() <= 1e-12 * base.max(1e-300));
    }
}

fn check_adjoint(d: usize, f: &[f64], g: &[f64]) -> Result<(), TestCaseError> {
    let t = torus(d);
    for i in 0..d {
        let lhs = dot(&forward_diff(&t, f, i).unwrap(), g);
        let rhs = dot(f, &backward_diff(&t, g, i).unwrap());
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()), "axis {i}: {lhs} vs {rhs}");
    }
    Ok(())
}

#[test]
fn gradient_subspace_dimensions() {
    for d in 1..=3 {
        let t = torus(d);
        let n = d * t.volume();
        // Trace of the projector onto gradients, column by column.
        let mut trace = 0.0;
        for c in 0..n {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            let (o, _) = project_gradient(&VectorField::from_flat(&t, &e).unwrap());
            trace += o.to_flat()[c];
        }
        assert!((trace - (t.volume() as f64 - 1.0)).abs() < 1e-9, "d={d}: {trace}");
        assert!(((n as f64 - trace) - ((d as f64 - 1.0) * t.volume() as f64 + 1.0)).abs() < 1e-9);
    }
}

#[test]
fn pushforward_of_quadratic_functional() {
    // F(φ) = Σ_x ⟨∇φ(x), B ∇φ(x)⟩ computed on φ and on its gradient image.
    let t = torus(2);
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let spec = GaussianSpec::new(&t, &DMatrix::identity(2, 2)).unwrap();
    let phi = gradlab_core::gaussian::GaussianSampler::new(&spec, 1.0).sample_pair(&mut rng).0;
    let phi = ScalarField::new(&t, phi).unwrap().centered();
    let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let direct: f64 = (0..t.volume())
        .map(|x| {
            let g = [phi.values[t.shift(x, 0, 1)] - phi.values[x], phi.values[t.shift(x, 1, 1)] - phi.values[x]];
            let gv = DVector::from_column_slice(&g);
            gv.dot(&(&b * &gv))
        })
        .sum();
    let eta = gradient_map(&phi).unwrap();
    let flat = DVector::from_vec(eta.to_flat());
    let block = DMatrix::from_fn(50, 50, |r, c| if r / 2 == c / 2 { b[(r % 2, c % 2)] } else { 0.0 });
    let via = flat.dot(&(&block * &flat));
    assert!((direct - via).abs() < 1e-10 * direct.abs());
}

#[test]
fn band_samples_add_up_to_total_covariance() {
    let t = torus(2);
    let spec = GaussianSpec::new(&t, &DMatrix::from_row_slice(2, 2, &[1.2, 0.1, 0.1, 0.8])).unwrap();
    let dec = spectral_band_decomposition(&spec, 2, 2).unwrap();
    let total = covariance_kernel(&spec);
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let probes = [(0usize, 0usize, 0usize), (0, 1, 1), (1, 1, 5)];
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); probes.len()];
    for _ in 0..40_000 {
        let mut phi = vec![0.0; t.volume()];
        for k in &dec.kernels {
            for (p, s) in phi.iter_mut().zip(sample_from_kernel(k, &mut rng)) {
                *p += s;
            }
        }
        let g = gradlab_core::fields::gradient_unchecked(&t, &phi);
        for (col, &(i, j, y)) in cols.iter_mut().zip(&probes) {
            col.push(g.comps[i][0] * g.comps[j][y]);
        }
    }
    let refs: Vec<Vec<&[f64]>> = vec![cols.iter().map(|c| c.as_slice()).collect()];
    let blocks = Blocks::from_chains(&refs, MIN_BATCHES);
    for (c, &(i, j, y)) in probes.iter().enumerate() {
        let est = blocks.jackknife(|m| m[c]);
        let exact = total.grad_between(i, 0, j, y);
        assert!((est.mean - exact).abs() < 3.0 * est.se, "{i}{j} at {y}: {est:?} vs {exact}");
    }
}

#[test]
fn determinant_oracle_matches_cumulant_series() {
    let t = torus(2);
    let spec = GaussianSpec::new(&t, &DMatrix::identity(2, 2)).unwrap();
    let c = gradient_covariance_matrix(&covariance_kernel(&spec)).unwrap();
    let n = c.nrows();
    let a = DMatrix::from_fn(n, n, |r, s| 1e-3 * (((r * 7 + s * 7) % 5) as f64 - 2.0) / 5.0);
    let a = (&a + a.transpose()) * 0.5;
    let ca = &c * &a;
    let series = 0.5 * ca.trace() + 0.25 * (&ca * &ca).trace();
    let oracle = quad_exp_integral(&c, &a, &DVector::zeros(n)).unwrap();
    assert!((oracle.log_value - series).abs() < 1e-8);
    let _ = scalar_covariance_matrix(&covariance_kernel(&spec)).unwrap();
}

#[test]
fn finite_range_kernels_have_independent_distant_gradients() {
    // Tent kernel on |x|_∞ ≤ 2 plus a constant tail: finite range at scale 1
    // with reach L = 5.
    let t = TorusSpec::new(5, 2, 2).unwrap();
    let scalar: Vec<f64> = (0..t.volume())
        .map(|x| {
            let r = t.coords(x).iter().map(|c| c.abs()).max().unwrap();
            if 2 * r < 5 {
                (3 - r) as f64
            } else {
                -0.25
            }
        })
        .collect();
    assert!(check_finite_range(&t, &scalar, 1, 5).finite_range);
    let k = CovarianceKernel::from_scalar(&t, scalar).unwrap();
    for x in 0..t.volume() {
        let r = t.coords(x).iter().map(|c| c.abs()).max().unwrap();
        if 2 * r >= 5 + 2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(k.grad[i * 2 + j][x], 0.0);
                }
            }
        }
    }
}

#[test]
fn quadratic_potential_is_exactly_gaussian_on_a_grid() {
    let v: Arc<dyn Potential> = Arc::new(Quadratic::new(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0])).unwrap());
    let params = ModelParams::new(1.0, vec![0.3, -0.2]);
    for i in -10..=10 {
        for j in -10..=10 {
            let z = [i as f64 * 0.7, j as f64 * 0.7];
            assert!(k_function(v.as_ref(), &params, &z).abs() < 1e-14);
        }
    }
}
