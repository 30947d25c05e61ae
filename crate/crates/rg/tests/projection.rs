use std::collections::HashMap;

use gradlab_core::gaussian::{spectral_band_decomposition, CovarianceKernel, GaussianSpec};
use gradlab_core::torus::{MultiIndex, TorusSpec};
use gradlab_rg::rg_core::*;
use gradlab_rg::rg_geom::GeometryConstants;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn frame(l: usize, k: usize, center: Vec<i64>) -> BlockFrame {
    BlockFrame::new(&GeometryConstants::new(2), l, k, center).unwrap()
}

fn scale_one_kernel(l: usize) -> CovarianceKernel {
    let t = TorusSpec::new(l, 1, 2).unwrap();
    let spec = GaussianSpec::new(&t, &DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.7])).unwrap();
    spectral_band_decomposition(&spec, 2, l).unwrap().scale(1).clone()
}

#[test]
fn idempotent_on_relevant_hamiltonians() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in [0usize, 1] {
        let f = frame(5, k, vec![0, 0]);
        let params = NormParams::new(5, 2, 2.0).unwrap();
        for _ in 0..100 {
            let h = RelevantHamiltonian::random(k, 2, &mut rng);
            let back = pi2(&h.as_functional(&f), &f).unwrap();
            assert!(hamiltonian_norm(&back.sub(&h), &params) < 1e-10);
        }
    }
}

#[test]
fn constant_functional_gives_block_averaged_lambda() {
    for k in [0usize, 1] {
        let f = frame(5, k, vec![0, 0]);
        let h = pi2(&PolynomialFunctional::constant(2, 3.5), &f).unwrap();
        assert_eq!(h.lambda, 3.5 / 25f64.powi(k as i32));
        assert!(h.a.iter().all(|&a| a == 0.0));
        assert!(h.dmat.iter().flatten().all(|&x| x == 0.0));
    }
}

#[test]
fn mixed_square_gives_off_diagonal_quadratic() {
    let f = frame(5, 1, vec![0, 0]);
    let mut k_fn = PolynomialFunctional::zero(2);
    for x in &f.block {
        k_fn.add_term(vec![Var::new(x.clone(), 0), Var::new(x.clone(), 1)], 1.0).unwrap();
    }
    let h = pi2(&k_fn, &f).unwrap();
    assert_eq!(h.dmat, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    assert_eq!(h.lambda, 0.0);
    assert!(h.a.iter().all(|&a| a == 0.0));
}

#[test]
fn support_outside_the_large_neighbourhood_is_rejected() {
    let f = frame(5, 1, vec![0, 0]);
    let mut k_fn = PolynomialFunctional::zero(2);
    k_fn.add_term(vec![Var::new(vec![40, 0], 0)], 1.0).unwrap();
    assert!(pi2(&k_fn, &f).is_err());
}

#[test]
fn projection_commutes_with_block_translations() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in [0usize, 1] {
        let f = frame(5, k, vec![0, 0]);
        let side = 5i64.pow(k as u32);
        let sites: Vec<Vec<i64>> = f.plus.sites().to_vec();
        for _ in 0..10 {
            let k_fn = random_polynomial(2, &sites, 3, 4, &mut rng);
            let base = pi2(&k_fn, &f).unwrap();
            for step in [[1i64, 0], [0, 1], [-2, 3], [7, -5]] {
                let offset: Vec<i64> = step.iter().map(|s| s * side).collect();
                let moved = pi2(&k_fn.translated(&offset), &f.translated(&offset)).unwrap();
                let scale = base.max_diff(&RelevantHamiltonian::zero(k, 2)).max(1.0);
                assert!(moved.max_diff(&base) <= 1e-12 * scale, "k={k} step {step:?}");
            }
        }
    }
}

proptest! {
    #[test]
    fn binomial_addition_identity(
        a in prop::collection::vec(0u32..4, 2),
        x in prop::collection::vec(-20i64..20, 2),
        y in prop::collection::vec(-20i64..20, 2),
    ) {
        let alpha = MultiIndex(a);
        let xy: Vec<i64> = x.iter().zip(&y).map(|(p, q)| p + q).collect();
        let lhs = binomial_basis(&alpha, &xy);
        let rhs: f64 = MultiIndex::all(2, 0, alpha.order())
            .into_iter()
            .filter(|b| b.le(&alpha))
            .map(|b| {
                let rest = MultiIndex(alpha.0.iter().zip(&b.0).map(|(p, q)| p - q).collect());
                binomial_basis(&b, &x) * binomial_basis(&rest, &y)
            })
            .sum();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }
}

#[test]
fn binomial_basis_values() {
    assert_eq!(binomial_basis(&MultiIndex(vec![0, 0]), &[-4, 7]), 1.0);
    assert_eq!(binomial_basis(&MultiIndex(vec![2]), &[3]), 3.0);
}

/// `∂_{t₁}⋯∂_{t_r} F(v + Σ t_i e_{x_i})` at `t = 0` by centred differences
/// with unit step. Exact for degree ≤ 3 when `r ≥ 2`; first order uses one
/// Richardson step to cancel the cubic error term.
fn mixed_derivative(f: &PolynomialFunctional, v: &HashMap<Var, f64>, tuple: &[Var]) -> f64 {
    let central = |h: f64| -> f64 {
        let r = tuple.len();
        let mut acc = 0.0;
        for mask in 0u32..(1 << r) {
            let mut sign = 1.0;
            let mut shift: HashMap<Var, f64> = HashMap::new();
            for (i, var) in tuple.iter().enumerate() {
                let e = if mask & (1 << i) != 0 { 1.0 } else { -1.0 };
                sign *= e;
                *shift.entry(var.clone()).or_insert(0.0) += e * h;
            }
            acc += sign * f.eval(|w| v.get(w).copied().unwrap_or(0.0) + shift.get(w).copied().unwrap_or(0.0));
        }
        acc / (2.0 * h).powi(r as i32)
    };
    match tuple.len() {
        0 => f.eval(|w| v.get(w).copied().unwrap_or(0.0)),
        1 => (4.0 * central(1.0) - central(2.0)) / 3.0,
        _ => central(1.0),
    }
}

#[test]
fn pairing_matches_derivatives_of_the_shifted_polynomial() {
    let sites = vec![vec![0i64, 0], vec![1, 0]];
    let vars: Vec<Var> = sites.iter().flat_map(|s| (0..2).map(move |c| Var::new(s.clone(), c))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..5 {
        let f = random_polynomial(2, &sites, 3, 5, &mut rng);
        let v: HashMap<Var, f64> = vars.iter().enumerate().map(|(i, w)| (w.clone(), 0.3 * (i as f64) - 0.4 + 0.1 * trial as f64)).collect();
        let mut tuples: Vec<Vec<Var>> = vec![vec![]];
        let mut layer: Vec<Vec<Var>> = vec![vec![]];
        for _ in 0..3 {
            layer = layer
                .iter()
                .flat_map(|t| vars.iter().map(move |w| [t.clone(), vec![w.clone()]].concat()))
                .collect();
            tuples.extend(layer.iter().cloned());
        }
        assert_eq!(tuples.len(), 1 + 4 + 16 + 64);
        for tuple in &tuples {
            let r = tuple.len();
            let got = taylor_pair(&f, |w| v.get(w).copied().unwrap_or(0.0), &[TestTensor::point(tuple.clone(), 1.0)]).unwrap();
            let want = mixed_derivative(&f, &v, tuple) / (1..=r).product::<usize>() as f64;
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{tuple:?}: {got} vs {want}");
        }
    }
}

#[test]
fn pairing_examples() {
    let x0 = vec![0i64, 0];
    let c = PolynomialFunctional::constant(2, 2.5);
    assert_eq!(taylor_pair(&c, |_| 0.0, &[TestTensor::scalar(1.0)]).unwrap(), 2.5);
    let mut sq = PolynomialFunctional::zero(2);
    sq.add_term(vec![Var::new(x0.clone(), 0), Var::new(x0.clone(), 0)], 1.0).unwrap();
    let g = TestTensor::point(vec![Var::new(x0.clone(), 0), Var::new(x0.clone(), 0)], 1.0);
    assert_eq!(taylor_pair(&sq, |_| 0.0, &[g]).unwrap(), 1.0);
    let too_high = TestTensor::point(vec![Var::new(x0, 0); 4], 1.0);
    assert!(taylor_pair(&sq, |_| 0.0, &[too_high]).is_err());
}

#[test]
fn integration_step_moves_only_the_constant() {
    let kernel = scale_one_kernel(5);
    let c = |i, j| kernel.grad_at(i, j, &[0, 0]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let mut constant = RelevantHamiltonian::zero(0, 2);
    constant.lambda = 1.7;
    assert_eq!(rg_a(&constant, &kernel).unwrap().lambda, 1.7);

    let mut linear = RelevantHamiltonian::zero(0, 2);
    linear.a = vec![0.5, -1.0, 2.0, 0.25, 3.0, -0.75];
    let out = rg_a(&linear, &kernel).unwrap();
    assert_eq!((out.lambda, &out.a, out.k), (0.0, &linear.a, 1));

    let mut quad = RelevantHamiltonian::zero(0, 2);
    quad.dmat = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let out = rg_a(&quad, &kernel).unwrap();
    assert!((out.lambda - 0.5 * (c(0, 0) + c(1, 1))).abs() < 1e-15);

    for _ in 0..20 {
        let h = RelevantHamiltonian::random(0, 2, &mut rng);
        let back = rg_a_inverse(&rg_a(&h, &kernel).unwrap(), &kernel).unwrap();
        assert!(back.max_diff(&h) < 1e-12);
        assert_eq!(back.k, 0);
    }
}

#[test]
fn reblocking_examples() {
    let kernel = scale_one_kernel(5);
    let f = frame(5, 0, vec![0, 0]);

    let zero = rg_b(&PolynomialFunctional::zero(2), &f, &kernel).unwrap();
    assert_eq!(zero, RelevantHamiltonian::zero(1, 2));

    let constant = rg_b(&PolynomialFunctional::constant(2, 1.25), &f, &kernel).unwrap();
    assert!((constant.lambda + 1.25).abs() < 1e-15);

    // K = v₁(x)² on the reference block: Wick adds 𝒞^∇_11(0), Π₂ reads the
    // square as d_11 = 2, and the reblocking average negates both.
    let mut sq = PolynomialFunctional::zero(2);
    sq.add_term(vec![Var::new(vec![0, 0], 0), Var::new(vec![0, 0], 0)], 1.0).unwrap();
    let out = rg_b(&sq, &f, &kernel).unwrap();
    assert!((out.lambda + kernel.grad_at(0, 0, &[0, 0])).abs() < 1e-14);
    assert!((out.dmat[0][0] + 2.0).abs() < 1e-14);
    assert!(out.a.iter().all(|&a| a.abs() < 1e-14));
}

#[test]
fn projection_bound_is_stable_and_relevant_inputs_vanish() {
    let cfg = ProbeConfig { ls: vec![5, 9], samples: 2, starts: 1, ..ProbeConfig::default() };
    let report = contraction_probe(&cfg).unwrap();
    assert!(report.relevant_ratio < 1e-10);
    let (a, b) = (report.projection_constant[0].1, report.projection_constant[1].1);
    assert!(a.is_finite() && b.is_finite() && a > 0.0);
    assert!((a / b - 1.0).abs() <= 0.25, "{a} vs {b}");
}
