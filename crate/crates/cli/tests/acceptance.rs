//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! A criterion listed in `KNOWN_FAILURES` is still run at full size and
//! still prints FAIL; it only stops the binary from exiting nonzero. A known
//! failure that starts passing is reported as unexpected, so the list cannot
//! go stale silently. Set `GRADLAB_ACCEPTANCE=1,3` to run a subset.

use std::sync::Arc;
use std::time::Instant;

use gradlab_cli::config::{ExperimentConfig, Task};
use gradlab_cli::{run, RunOptions};
use gradlab_core::gaussian::{build_spec, check_finite_range, covariance_kernel, quad_exp_integral, spectral_band_decomposition, GaussianSpec};
use gradlab_core::potentials::{check_assumptions, k_function, CosinePerturbed, GridSpec, ModelParams, Potential, Quadratic};
use gradlab_core::sampler::SamplerConfig;
use gradlab_core::scaling::{covariance_fit, gff_quadratic_form, laplace_exact_gaussian, scale_test_function, TestFunction};
use gradlab_core::thermo::{hessian_finite_difference, hessian_fluctuation, sigma_exact_hessian, sigma_ti, ChainPlan, MatrixEstimate};
use gradlab_core::torus::TorusSpec;
use gradlab_rg::rg_core::{contraction_probe, hamiltonian_norm, pi2, random_polynomial, BlockFrame, NormParams, PolynomialFunctional, ProbeConfig, RelevantHamiltonian, Var};
use gradlab_rg::rg_geom::{geometry_suite, Geometry, GeometryConstants};
use gradlab_rg::weights::{PropertyInstance, WeightSystem, WfConstantsConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 2: the requested cosine instance `a = 0.3, b = e₁` has `D²V ≥ 0.7`, so
/// the non-convexity witness it is supposed to produce does not exist.
/// 5: the range inequality for neighbouring strictly disjoint 1-blocks needs
/// `L ≥ 4(2^d + R) = 36` at `d = 2, R = 5`; the instance asks for `L = 29`.
const KNOWN_FAILURES: &[usize] = &[2, 5];

/// Agreement within `3σ` of the joint error, with an absolute floor for
/// entries whose error bars vanish (exactly determined quantities).
fn agree(a: f64, sa: f64, b: f64, sb: f64) -> bool {
    (a - b).abs() <= (3.0 * sa.hypot(sb)).max(1e-10)
}

/// Relative statistical error of entry `(i, j)`; off-diagonal entries are
/// measured against `sqrt(|H_ii H_jj|)` since they may vanish by symmetry.
fn rel_error(h: &MatrixEstimate, i: usize, j: usize) -> f64 {
    let scale = if i == j { h.mean[i][i].abs() } else { (h.mean[i][i] * h.mean[j][j]).abs().sqrt() };
    h.se[i][j] / scale
}

fn show(h: &MatrixEstimate) -> String {
    let d = h.mean.len();
    let cells: Vec<String> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| format!("{:.5}±{:.1e}", h.mean[i][j], h.se[i][j])).collect();
    format!("[{}]", cells.join(", "))
}

struct Outcome {
    pass: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { pass: true, lines: Vec::new() }
    }
    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }
}

fn diag31() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0])
}

fn cosine() -> Arc<dyn Potential> {
    Arc::new(CosinePerturbed::new(0.3, vec![1.0, 0.0]).unwrap())
}

fn plan(sweeps: usize, seed: u64) -> ChainPlan {
    ChainPlan::new(SamplerConfig { sweeps, burn_in: 200, ..Default::default() }, 1, seed)
}

fn criterion_1() -> Outcome {
    let mut out = Outcome::new();
    let m = diag31();
    let v: Arc<dyn Potential> = Arc::new(Quadratic::new(m.clone()).unwrap());
    for u in [vec![0.0, 0.0], vec![0.2, -0.1]] {
        let params = ModelParams::new(1.0, u.clone());
        let grid = GridSpec::default_for(2, &u);
        let worst = grid.points(2).iter().map(|z| k_function(v.as_ref(), &params, z).abs()).fold(0.0, f64::max);
        out.check(worst < 1e-14, format!("(a) u={u:?}: max |K| over {} grid points = {worst:.1e}", grid.points_per_axis.pow(2)));
    }
    let f = TestFunction::cosine_mode(&[1, 0]).unwrap();
    let continuum = gff_quadratic_form(&m, &f).unwrap() / 2.0;
    let mut gaps = Vec::new();
    for n in 1..=3 {
        let t = TorusSpec::new(5, n, 2).unwrap();
        let u = [0.2, -0.1];
        let exact = sigma_exact_hessian(&m, 1.0, &t, &u).unwrap();
        let dev = (&exact - &m).abs().max();
        out.check(dev < 1e-10, format!("(b) N={n} exact Hessian: max |H - M| = {dev:.1e}"));
        let mc = hessian_fluctuation(&v, &ModelParams::new(1.0, u.to_vec()), &t, &plan(10_000, 11 + n as u64)).unwrap();
        let ok = (0..2).all(|i| (0..2).all(|j| agree(mc.mean[i][j], mc.se[i][j], m[(i, j)], 0.0)));
        out.check(ok, format!("(b) N={n} Monte Carlo Hessian (10^4 sweeps) {}", show(&mc)));
        let spec = GaussianSpec::new(&t, &m).unwrap();
        let lap = laplace_exact_gaussian(&spec, 1.0, &scale_test_function(&f, &t).unwrap()).unwrap();
        gaps.push((lap.log_value - continuum).abs() / continuum);
    }
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    let last = *gaps.last().unwrap();
    let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.3e}")).collect();
    out.check(monotone && last < 0.05, format!("(c) log-Laplace relative gaps over N=1,2,3: {} (monotone {monotone}, final < 5%)", shown.join(", ")));
    out
}

/// Joint 3σ agreement of the fitted covariance with the fluctuation Hessian,
/// plus the 5% relative-error budget on every entry of both.
fn scaling_matches_hessian(out: &mut Outcome, v: &Arc<dyn Potential>, label: &str, seed: u64) {
    let t = TorusSpec::new(5, 3, 2).unwrap();
    let modes = vec![vec![1, 0], vec![0, 1], vec![1, 1]];
    for (idx, u) in [vec![0.0, 0.0], vec![0.1, 0.0]].into_iter().enumerate() {
        let params = ModelParams::new(50.0, u.clone());
        let report = check_assumptions(v.as_ref(), &params, &GridSpec::default_for(2, &u));
        let convex = report.get("uniform_convexity").unwrap();
        out.check(!convex.passed, format!("{label}, u={u:?}: non-convex, witness {:?} ({})", convex.witness, convex.detail));
        let sigma = hessian_fluctuation(v, &params, &t, &plan(4_000, seed + idx as u64)).unwrap();
        let fit = covariance_fit(v, &params, &t, &modes, &plan(10_000, seed + 100 + idx as u64)).unwrap().h;
        let mut max_gap = 0.0f64;
        let mut ok = true;
        let mut worst_rel = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                max_gap = max_gap.max((fit.mean[i][j] - sigma.mean[i][j]).abs());
                ok &= agree(fit.mean[i][j], fit.se[i][j], sigma.mean[i][j], sigma.se[i][j]);
                worst_rel = worst_rel.max(rel_error(&fit, i, j)).max(rel_error(&sigma, i, j));
            }
        }
        out.check(ok, format!("{label}, u={u:?}: H_fit {} vs H_sigma {}, max gap {max_gap:.4}", show(&fit), show(&sigma)));
        out.check(worst_rel <= 0.05, format!("{label}, u={u:?}: largest relative statistical error {:.2}%", 100.0 * worst_rel));
    }
}

fn criterion_2() -> Outcome {
    let mut out = Outcome::new();
    scaling_matches_hessian(&mut out, &cosine(), "a=0.3", 100);
    // The requested instance is convex (D²V ≥ 0.7), so its witness check
    // fails. a = 2 is genuinely non-convex and runs the same comparison.
    let strong: Arc<dyn Potential> = Arc::new(CosinePerturbed::new(2.0, vec![1.0, 0.0]).unwrap());
    scaling_matches_hessian(&mut out, &strong, "a=2 (supplementary)", 600);
    out
}

fn criterion_3() -> Outcome {
    let mut out = Outcome::new();
    let v = cosine();
    let t = TorusSpec::new(5, 3, 2).unwrap();
    let params = ModelParams::new(50.0, vec![0.1, 0.0]);
    let fl = hessian_fluctuation(&v, &params, &t, &plan(2_000, 300)).unwrap();
    let fd = hessian_finite_difference(&v, &params, &t, &plan(2_000, 301), 0.05, true).unwrap();
    let ok = (0..2).all(|i| (0..2).all(|j| agree(fl.mean[i][j], fl.se[i][j], fd.mean[i][j], fd.se[i][j])));
    out.check(ok, format!("fluctuation {} vs finite differences {}", show(&fl), show(&fd)));
    let start = vec![0.0, 0.0];
    let end = vec![0.1, 0.1];
    let straight = sigma_ti(&v, &params, &t, &[start.clone(), end.clone()], 4, &plan(1_500, 400)).unwrap();
    let bent = sigma_ti(&v, &params, &t, &[start, vec![0.1, 0.0], end], 4, &plan(1_500, 500)).unwrap();
    let ok = agree(straight.value, straight.se, bent.value, bent.se);
    out.check(
        ok,
        format!(
            "sigma(0.1,0.1) - sigma(0): straight {:.10}±{:.1e}, via (0.1,0) {:.10}±{:.1e}",
            straight.value, straight.se, bent.value, bent.se
        ),
    );
    out
}

fn criterion_4() -> Outcome {
    let mut out = Outcome::new();
    let constants = GeometryConstants::new(2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in [0usize, 1] {
        let frame = BlockFrame::new(&constants, 5, k, vec![0, 0]).unwrap();
        let params = NormParams::new(5, 2, 2.0).unwrap();
        let worst = (0..100)
            .map(|_| {
                let h = RelevantHamiltonian::random(k, 2, &mut rng);
                hamiltonian_norm(&pi2(&h.as_functional(&frame), &frame).unwrap().sub(&h), &params)
            })
            .fold(0.0, f64::max);
        out.check(worst < 1e-10, format!("k={k}: idempotence residual over 100 relevant Hamiltonians {worst:.1e}"));

        let c = pi2(&PolynomialFunctional::constant(2, 3.5), &frame).unwrap();
        out.check(c.lambda == 3.5 / 25f64.powi(k as i32), format!("k={k}: constant 3.5 gives lambda = {}", c.lambda));
        let mut mixed = PolynomialFunctional::zero(2);
        for x in &frame.block {
            mixed.add_term(vec![Var::new(x.clone(), 0), Var::new(x.clone(), 1)], 1.0).unwrap();
        }
        let h = pi2(&mixed, &frame).unwrap();
        out.check(h.dmat == vec![vec![0.0, 1.0], vec![1.0, 0.0]] && h.lambda == 0.0, format!("k={k}: block sum of v1 v2 gives d = {:?}", h.dmat));

        let side = 5i64.pow(k as u32);
        let sites: Vec<Vec<i64>> = frame.plus.sites().to_vec();
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let f = random_polynomial(2, &sites, 3, 4, &mut rng);
            let base = pi2(&f, &frame).unwrap();
            let scale = base.max_diff(&RelevantHamiltonian::zero(k, 2)).max(1.0);
            for step in [[1i64, 0], [0, 1], [-2, 3], [7, -5]] {
                let offset: Vec<i64> = step.iter().map(|s| s * side).collect();
                let moved = pi2(&f.translated(&offset), &frame.translated(&offset)).unwrap();
                worst = worst.max(moved.max_diff(&base) / scale);
            }
        }
        out.check(worst <= 1e-12, format!("k={k}: translation covariance, largest relative change {worst:.1e}"));
    }
    let probe = contraction_probe(&ProbeConfig { samples: 4, starts: 2, ..ProbeConfig::default() }).unwrap();
    let per_l: Vec<f64> = probe.max_ratio.iter().map(|&(l, r)| r * (l as f64).powf(probe.exponent)).collect();
    let tight = per_l.iter().all(|&c| c >= probe.constant / 1.15);
    let slope_ok = (probe.slope + probe.exponent).abs() <= 0.15 * probe.exponent;
    out.check(
        tight && slope_ok,
        format!(
            "contraction at L={:?}: r(L) <= C L^-{} with C = {:.3}, per-L constants {:.3?}, log-log slope {:.3}",
            probe.config.ls, probe.exponent, probe.constant, per_l, probe.slope
        ),
    );
    out.check(probe.relevant_ratio < 1e-10, format!("relevant inputs: ratio {:.1e}", probe.relevant_ratio));
    out
}

fn criterion_5() -> Outcome {
    let mut out = Outcome::new();
    let geom = Geometry::new(&TorusSpec::new(29, 2, 2).unwrap(), GeometryConstants::new(2)).unwrap();
    let report = geometry_suite(&geom, 5);
    out.lines.push(format!("     {} connected polymers with |X| <= 5 at L=29, N=2, R={}", report.polymers, report.r));
    for c in &report.checks {
        let tail = c.example.as_ref().map(|e| format!(", e.g. {e}")).unwrap_or_default();
        out.check(c.violations == 0, format!("{}: {} violations in {} cases{tail}", c.name, c.violations, c.cases));
    }
    out
}

fn criterion_6() -> Outcome {
    let mut out = Outcome::new();
    for l in [5usize, 7, 9] {
        let t = TorusSpec::new(l, 1, 2).unwrap();
        let geom = Geometry::new(&t, GeometryConstants::new(2)).unwrap();
        let q = DMatrix::identity(2, 2);
        let dec = spectral_band_decomposition(&GaussianSpec::new(&t, &q).unwrap(), 2, l).unwrap();
        let s = WeightSystem::calibrated(&geom, &q, &WfConstantsConfig::default(), geom.constants().r, &dec).unwrap();
        let g = &geom;
        let single = g.polymer(0, [0]).unwrap();
        let far = g.polymer(0, [g.block_id(0, &[2, 2])]).unwrap();
        let next = g.polymer(0, [g.block_id(0, &[0, 1])]).unwrap();
        let mut residual = 0.0f64;
        let mut kernels = true;
        for x in [single.clone(), g.whole(0), g.whole(1)] {
            residual = residual.max(s.structure_residual(&x).unwrap());
            kernels &= s.kernel_check(&x).unwrap().holds;
        }
        out.check(residual < 1e-9, format!("L={l}: gradient/scalar residual {residual:.1e}"));
        out.check(kernels, format!("L={l}: kernel dimensions agree for k = 0, 1"));
        let cases = vec![
            (1, PropertyInstance::new(g.whole(0)).with_y(single.clone())),
            (1, PropertyInstance::new(g.whole(1)).with_y(g.empty(1))),
            (2, PropertyInstance::new(g.whole(0))),
            (2, PropertyInstance::new(g.whole(1))),
            (3, PropertyInstance::new(single.clone()).with_y(far.clone())),
            (5, PropertyInstance::new(single.clone()).with_y(next)),
            (6, PropertyInstance::new(single.clone()).with_y(far)),
            (7, PropertyInstance::new(single.clone())),
            (8, PropertyInstance::new(g.whole(1))),
            (9, PropertyInstance::new(single.clone())),
            (10, PropertyInstance::new(single.clone())),
        ];
        let mut structural = Vec::new();
        for (p, inst) in cases {
            let r = s.verify_property(p, &inst).unwrap();
            if p <= 8 {
                let certified = r.min_eig.map(|e| e >= -1e-9).unwrap_or(true) && r.residual.map(|x| x < 1e-9).unwrap_or(true);
                structural.push((p, r.k, r.holds && certified));
            } else {
                let mc = r.mc.as_ref().expect("integral properties compare with Monte Carlo");
                let ok = r.holds && mc.finite_variance && mc.agree;
                out.check(ok, format!("L={l}: property {p} at k={}: constant {:.4}, Monte Carlo agrees {}", r.k, r.measured_constant.unwrap_or(f64::NAN), mc.agree));
            }
        }
        let ok = structural.iter().all(|x| x.2);
        let list: Vec<String> = structural.iter().map(|(p, k, _)| format!("{p}@k{k}")).collect();
        out.check(ok, format!("L={l}: properties {} certified (4 has no admissible pair at N=1)", list.join(" ")));
    }
    out
}

fn criterion_7() -> Outcome {
    let mut out = Outcome::new();
    let one = DMatrix::from_element(1, 1, 1.0);
    let mut worst = 0.0f64;
    for l in [5usize, 7, 9, 11, 25] {
        let t = TorusSpec::new(l, 1, 1).unwrap();
        let c0 = covariance_kernel(&GaussianSpec::new(&t, &one).unwrap()).at(&[0]);
        let lf = l as f64;
        worst = worst.max((c0 - (lf * lf - 1.0) / (12.0 * lf)).abs());
    }
    out.check(worst < 1e-12, format!("cycle covariance C(0) = (L^2-1)/(12L) for L in 5..25: max error {worst:.1e}"));

    let t = TorusSpec::new(5, 2, 2).unwrap();
    let q_v = DMatrix::identity(2, 2);
    let omega0 = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let raw = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let sym = (&raw + raw.transpose()) * 0.5;
        let norm = sym.clone().symmetric_eigen().eigenvalues.abs().max();
        let q = sym * (0.5 * omega0 * rng.random_range(0.0..0.99) / norm);
        let spec = build_spec(&q_v, &q, &t, omega0).unwrap();
        worst = worst.max(covariance_kernel(&spec).fourier_residual());
    }
    out.check(worst < 1e-12, format!("gradient kernels match q(p) q(-p) C(p) for 20 random q: residual {worst:.1e}"));

    let spec = GaussianSpec::new(&t, &DMatrix::from_row_slice(2, 2, &[1.2, 0.1, 0.1, 0.8])).unwrap();
    let dec = spectral_band_decomposition(&spec, 3, 5).unwrap();
    let residual = dec.sum_residual(&covariance_kernel(&spec));
    out.check(residual < 1e-10, format!("band decomposition sums to the total covariance: residual {residual:.1e}"));

    let tent = |tail: &dyn Fn(&[i64]) -> f64| -> Vec<f64> {
        (0..t.volume())
            .map(|x| {
                let c = t.coords(x);
                let r = c.iter().map(|v| v.abs()).max().unwrap();
                if 2 * r < 5 {
                    (3 - r) as f64
                } else {
                    tail(&c)
                }
            })
            .collect()
    };
    let positive = check_finite_range(&t, &tent(&|_| -0.25), 1, 5);
    let negative = check_finite_range(&t, &tent(&|c| -0.25 + 1e-3 * c[0] as f64), 1, 5);
    out.check(
        positive.finite_range && positive.tail_value == Some(-0.25) && !negative.finite_range && negative.witness.is_some(),
        format!("finite-range checker: constant tail accepted ({:?}), varying tail rejected at {:?}", positive.tail_value, negative.witness.map(|w| w.0)),
    );

    let q = quad_exp_integral(&DMatrix::from_element(1, 1, 1.0), &DMatrix::from_element(1, 1, 0.25), &DVector::zeros(1)).unwrap();
    let err = (q.value - 2.0 / 3f64.sqrt()).abs();
    out.check(err < 1e-12, format!("determinant integral in one dimension: {:.15} vs 2/sqrt(3), error {err:.1e}", q.value));
    out
}

const REPRO_CONFIGS: &[(&str, &str)] = &[
    ("validate", "[model]\nl = 5\nn = 1\nd = 2\nbeta = 1.0\npotential = { kind = \"quadratic\", m = [[3.0, 0.0], [0.0, 1.0]] }\n"),
    (
        "sample",
        "seed = 3\nchains = 2\n[model]\nl = 5\nn = 1\nd = 2\nbeta = 1.0\nu = [0.2, -0.1]\npotential = { kind = \"quadratic\", m = [[3.0, 0.0], [0.0, 1.0]] }\n[sampler]\nsweeps = 600\nburn_in = 100\n",
    ),
    (
        "surface-tension",
        "seed = 5\nchains = 2\n[model]\nl = 5\nn = 1\nd = 2\nbeta = 50.0\nu = [0.1, 0.0]\npotential = { kind = \"cosine_perturbed\", a = 0.3, b = [1.0, 0.0] }\n[sampler]\nsweeps = 600\nburn_in = 100\n[surface_tension]\nmethods = [\"fluctuation\", \"finite-difference\"]\nti_path = [[0.0, 0.0], [0.1, 0.1]]\n",
    ),
    (
        "scaling-limit",
        "seed = 9\nchains = 2\n[model]\nl = 5\nn = 2\nd = 2\nbeta = 50.0\npotential = { kind = \"cosine_perturbed\", a = 0.3, b = [1.0, 0.0] }\n[sampler]\nsweeps = 600\nburn_in = 100\n",
    ),
    (
        "rg-check",
        "[model]\nl = 5\nn = 2\nd = 2\nbeta = 1.0\npotential = { kind = \"quadratic\", m = [[1.0, 0.0], [0.0, 1.0]] }\n[rg]\nmax_size = 2\nprobe = { d = 2, ls = [5], k = 0, samples = 1, terms_per_degree = 2, h = 2.0, seed = 17, starts = 1 }\n",
    ),
    ("wf-check", "[model]\nl = 5\nn = 1\nd = 2\nbeta = 1.0\npotential = { kind = \"quadratic\", m = [[1.0, 0.0], [0.0, 1.0]] }\n"),
];

fn criterion_8() -> Outcome {
    let mut out = Outcome::new();
    let root = tempfile::tempdir().unwrap();
    for (name, text) in REPRO_CONFIGS {
        let task = <Task as clap::ValueEnum>::from_str(name, false).unwrap();
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let mut manifests = Vec::new();
        for (rerun, workers) in [(0, 1), (1, 2)] {
            let dir = root.path().join(format!("{name}-{rerun}"));
            let opts = RunOptions { task: Some(task), out: Some(dir.clone()), workers: Some(workers), clock: Some(1_700_000_000), ..Default::default() };
            run(cfg.clone(), &opts).unwrap();
            manifests.push(std::fs::read(dir.join("manifest.json")).unwrap());
        }
        let same = manifests[0] == manifests[1];
        out.check(same, format!("{name}: manifests byte-identical across reruns with 1 and 2 workers"));
    }
    out
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("GRADLAB_ACCEPTANCE").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "quadratic exactness chain", criterion_1),
        (2, "scaling-limit covariance equals the surface-tension Hessian", criterion_2),
        (3, "estimator cross-validation", criterion_3),
        (4, "second-order projection suite", criterion_4),
        (5, "polymer geometry suite at L=29", criterion_5),
        (6, "weight-function suite", criterion_6),
        (7, "Gaussian infrastructure", criterion_7),
        (8, "reproducibility", criterion_8),
    ];
    let mut unexpected = Vec::new();
    let mut summary = Vec::new();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        for line in &outcome.lines {
            println!("    {line}");
        }
        let known = KNOWN_FAILURES.contains(&id);
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        let note = match (outcome.pass, known) {
            (false, true) => " (known failure, see notes)",
            (true, true) => " (listed as a known failure but passed)",
            _ => "",
        };
        let line = format!("criterion {id} [{name}]: {verdict} in {secs:.1} s{note}");
        println!("{line}\n");
        summary.push(line);
        if outcome.pass == known {
            unexpected.push(id);
        }
    }
    println!("acceptance summary");
    for line in &summary {
        println!("  {line}");
    }
    if !unexpected.is_empty() {
        println!("unexpected outcomes for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
