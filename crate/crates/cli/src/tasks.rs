//! One function per task. Each returns the report and tables without
//! touching the file system.

use std::collections::BTreeMap;

use gradlab_core::gaussian::{spectral_band_decomposition, GaussianSpec};
use gradlab_core::potentials::{check_assumptions, GridSpec, PotentialConfig};
use gradlab_core::sampler::{run_chains, Observable};
use gradlab_core::scaling::{covariance_fit, gff_quadratic_form, laplace_exact_gaussian, scale_test_function, TestFunction};
use gradlab_core::thermo::{fluctuation_observables, grad_sigma_mc, hessian_finite_difference, hessian_fluctuation, sigma_exact_hessian, sigma_exact_quadratic, sigma_ti, MatrixEstimate};
use gradlab_rg::rg_core::contraction_probe;
use gradlab_rg::rg_geom::{geometry_suite, validate_constants, Geometry, GeometryConstants};
use gradlab_rg::weights::{PropertyInstance, WeightSystem};
use nalgebra::DMatrix;
use serde_json::json;

use crate::config::{ExperimentConfig, HessianMethod, Model, Task};
use crate::output::{fmt_float, EstimateValue, Estimates, Report, Table, TaskOutput, REPORT_SCHEMA};
use crate::CliError;

fn numerical(e: gradlab_core::Error) -> CliError {
    CliError::Numerical(e.to_string())
}

fn f(x: f64) -> String {
    fmt_float(x)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn quadratic_matrix(cfg: &ExperimentConfig) -> Option<DMatrix<f64>> {
    match &cfg.model.potential {
        PotentialConfig::Quadratic { m } => {
            let d = m.len();
            Some(DMatrix::from_fn(d, d, |i, j| m[i][j]))
        }
        _ => None,
    }
}

fn matrix_table(name: &str, est: &MatrixEstimate, table: &mut Table) {
    for (i, row) in est.mean.iter().enumerate() {
        for (j, &m) in row.iter().enumerate() {
            table.push(vec![name.into(), i.to_string(), j.to_string(), f(m), f(est.se[i][j])]);
        }
    }
}

pub fn run_task(task: Task, cfg: &ExperimentConfig, model: &Model, desk_regime: bool, config_hash: &str) -> Result<TaskOutput, CliError> {
    let (estimates, details, tables, checkpoints) = match task {
        Task::Validate => validate(cfg, model, desk_regime),
        Task::Sample => sample(cfg, model)?,
        Task::SurfaceTension => surface_tension(cfg, model)?,
        Task::ScalingLimit => scaling_limit(cfg, model)?,
        Task::RgCheck => rg_check(cfg, model, desk_regime)?,
        Task::WfCheck => wf_check(cfg, model)?,
    };
    let report = Report { schema: REPORT_SCHEMA.into(), task: task.name().into(), config_hash: config_hash.into(), estimates, details };
    Ok(TaskOutput { report, tables, checkpoints })
}

type Parts = (Estimates, serde_json::Value, BTreeMap<String, Table>, Vec<(String, gradlab_core::sampler::Checkpoint)>);

fn validate(cfg: &ExperimentConfig, model: &Model, desk_regime: bool) -> Parts {
    let d = cfg.model.d;
    let constraints = validate_constants(cfg.model.l as u64, GeometryConstants::new(d), desk_regime);
    let grid = GridSpec::default_for(d, &model.params.u);
    let assumptions = check_assumptions(model.potential.as_ref(), &model.params, &grid);
    let failed: Vec<&str> = constraints.checks.iter().filter(|c| !c.holds).map(|c| c.name.as_str()).collect();
    let mut table = Table::new(&["kind", "name", "holds", "detail"]);
    for c in &constraints.checks {
        table.push(vec!["constraint".into(), c.name.clone(), c.holds.to_string(), format!("L >= {}", c.required)]);
    }
    for c in &assumptions.checks {
        table.push(vec!["assumption".into(), c.name.clone(), c.passed.to_string(), c.detail.clone()]);
    }
    let details = json!({
        "failed_constraints": failed,
        "constraints": constraints,
        "assumptions": assumptions,
        "grid": grid,
    });
    (Estimates::new(), details, BTreeMap::from([("checks".to_string(), table)]), Vec::new())
}

fn sample(cfg: &ExperimentConfig, model: &Model) -> Result<Parts, CliError> {
    let d = cfg.model.d;
    let mut obs = vec![Observable::Energy];
    obs.extend(fluctuation_observables(d));
    obs.push(Observable::ZeroSum);
    let runs = run_chains(model.potential.clone(), &model.torus, model.params.beta, &model.params.u, &cfg.sampler, &obs, cfg.seed, cfg.chains).map_err(numerical)?;
    let mut summary = Table::new(&["chain", "observable", "mean", "se", "tau_int", "ess"]);
    let mut estimates = Estimates::new();
    for o in &obs {
        let name = o.name();
        let series: Vec<_> = runs.iter().map(|r| r.get(&name).expect("observable recorded")).collect();
        for (c, s) in series.iter().enumerate() {
            summary.push(vec![c.to_string(), name.clone(), f(s.mean()), f(s.se()), f(s.tau_int), f(s.ess)]);
        }
        let n = series.len() as f64;
        let mean = series.iter().map(|s| s.mean()).sum::<f64>() / n;
        let se = series.iter().map(|s| s.se().powi(2)).sum::<f64>().sqrt() / n;
        estimates.insert(format!("observable/{name}"), EstimateValue::scalar(mean, se));
    }
    let mut acceptance = Table::new(&["chain", "local", "overrelax", "global", "final_scale", "final_global_step"]);
    for (c, r) in runs.iter().enumerate() {
        let a = &r.acceptance;
        acceptance.push(vec![c.to_string(), f(a.local_rate()), f(a.overrelax_rate()), f(a.global_rate()), f(r.final_scale), f(r.final_global_step)]);
    }
    let details = json!({
        "chains": runs.len(),
        "recorded_sweeps": runs.first().map(|r| r.series[0].values.len()),
        "acceptance": runs.iter().map(|r| r.acceptance).collect::<Vec<_>>(),
    });
    let checkpoints = runs.iter().enumerate().map(|(c, r)| (format!("chain_{c}"), r.checkpoint.clone())).collect();
    let tables = BTreeMap::from([("series_summary".to_string(), summary), ("acceptance".to_string(), acceptance)]);
    Ok((estimates, details, tables, checkpoints))
}

fn surface_tension(cfg: &ExperimentConfig, model: &Model) -> Result<Parts, CliError> {
    let opts = &cfg.surface_tension;
    let (v, p, t) = (&model.potential, &model.params, &model.torus);
    let plan = cfg.plan();
    let mut estimates = Estimates::new();
    let mut table = Table::new(&["method", "i", "j", "mean", "se"]);
    let mut details = serde_json::Map::new();
    for (idx, method) in opts.methods.iter().enumerate() {
        let (key, est) = match method {
            HessianMethod::Exact => {
                let m = quadratic_matrix(cfg).ok_or_else(|| CliError::Schema("the exact method needs a quadratic potential".into()))?;
                let h = sigma_exact_hessian(&m, p.beta, t, &p.u).map_err(numerical)?;
                let sigma = sigma_exact_quadratic(&m, p.beta, t, &p.u).map_err(numerical)?;
                details.insert("sigma_exact".into(), json!(sigma));
                let rows = rows(&h);
                let zeros = vec![vec![0.0; rows.len()]; rows.len()];
                ("exact", MatrixEstimate { mean: rows, se: zeros, min_ess: f64::INFINITY, low_ess: false })
            }
            HessianMethod::Fluctuation => ("fluctuation", hessian_fluctuation(v, p, t, &plan).map_err(numerical)?),
            HessianMethod::FiniteDifference => ("finite-difference", hessian_finite_difference(v, p, t, &plan, opts.fd_step, opts.richardson).map_err(numerical)?),
        };
        matrix_table(key, &est, &mut table);
        let value = EstimateValue::matrix(&est.mean, &est.se);
        if idx == 0 {
            estimates.insert("hessian".into(), value.clone());
        }
        estimates.insert(format!("hessian/{key}"), value);
        details.insert(format!("low_ess/{key}"), json!(est.low_ess));
    }
    if opts.methods.iter().any(|m| *m != HessianMethod::Exact) {
        let g = grad_sigma_mc(v, p, t, &plan).map_err(numerical)?;
        estimates.insert("gradient".into(), EstimateValue::vector(&g.mean, &g.se));
    }
    let mut tables = BTreeMap::from([("hessian".to_string(), table)]);
    if let Some(path) = &opts.ti_path {
        let ti = sigma_ti(v, p, t, path, opts.ti_order, &plan).map_err(numerical)?;
        estimates.insert("sigma_difference".into(), EstimateValue::scalar(ti.value, ti.se));
        details.insert("quadrature_indicator".into(), json!(ti.quadrature_indicator));
        let mut nodes = Table::new(&["node", "u", "gradient", "se"]);
        for (k, (u, g)) in ti.nodes.iter().enumerate() {
            let join = |x: &[f64]| x.iter().map(|v| f(*v)).collect::<Vec<_>>().join(" ");
            nodes.push(vec![k.to_string(), join(u), join(&g.mean), join(&g.se)]);
        }
        tables.insert("integration_nodes".into(), nodes);
    }
    details.insert("u".into(), json!(p.u));
    details.insert("beta".into(), json!(p.beta));
    Ok((estimates, serde_json::Value::Object(details), tables, Vec::new()))
}

fn scaling_limit(cfg: &ExperimentConfig, model: &Model) -> Result<Parts, CliError> {
    let (v, p, t) = (&model.potential, &model.params, &model.torus);
    let modes = cfg.modes();
    let fit = covariance_fit(v, p, t, &modes, &cfg.plan()).map_err(numerical)?;
    let mut estimates = Estimates::new();
    estimates.insert("hessian".into(), EstimateValue::matrix(&fit.h.mean, &fit.h.se));
    let mut table = Table::new(&["mode", "form", "se", "method", "bias_flag"]);
    for m in &fit.modes {
        let k = format!("{:?}", m.k);
        table.push(vec![k.clone(), f(m.form.mean), f(m.form.se), m.method.clone(), m.laplace.bias_flag.to_string()]);
        estimates.insert(format!("mode/{k}"), EstimateValue::scalar(m.form.mean, m.form.se));
    }
    let mut tables = BTreeMap::from([("modes".to_string(), table)]);
    let mut details = json!({ "modes": modes, "low_ess": fit.h.low_ess, "min_ess": fit.h.min_ess });
    if let (true, Some(m)) = (cfg.scaling.exact, quadratic_matrix(cfg)) {
        let spec = GaussianSpec::new(t, &m).map_err(numerical)?;
        let mut exact = Table::new(&["mode", "log_laplace", "continuum", "relative_gap"]);
        let mut gaps = Vec::new();
        for k in &modes {
            let tf = TestFunction::cosine_mode(k).map_err(numerical)?;
            let lap = laplace_exact_gaussian(&spec, p.beta, &scale_test_function(&tf, t).map_err(numerical)?).map_err(numerical)?;
            let cont = gff_quadratic_form(&m, &tf).map_err(numerical)? / (2.0 * p.beta);
            let gap = (lap.log_value - cont).abs() / cont.abs();
            exact.push(vec![format!("{k:?}"), f(lap.log_value), f(cont), f(gap)]);
            gaps.push(gap);
        }
        tables.insert("exact_laplace".into(), exact);
        details["exact_relative_gaps"] = json!(gaps);
    }
    Ok((estimates, details, tables, Vec::new()))
}

fn rg_check(cfg: &ExperimentConfig, model: &Model, desk_regime: bool) -> Result<Parts, CliError> {
    let d = cfg.model.d;
    let constants = GeometryConstants::new(d);
    let constraints = validate_constants(cfg.model.l as u64, constants, desk_regime);
    let mut tables = BTreeMap::new();
    let mut details = json!({ "constraints": constraints });
    if cfg.rg.max_size > 0 {
        let geom = Geometry::new(&model.torus, constants).map_err(numerical)?;
        let suite = geometry_suite(&geom, cfg.rg.max_size);
        let mut t = Table::new(&["check", "cases", "violations", "example"]);
        for c in &suite.checks {
            t.push(vec![c.name.clone(), c.cases.to_string(), c.violations.to_string(), c.example.clone().unwrap_or_default()]);
        }
        tables.insert("geometry".to_string(), t);
        details["geometry"] = json!({ "violations": suite.violations(), "report": suite });
    }
    if let Some(probe) = &cfg.rg.probe {
        let r = contraction_probe(probe).map_err(numerical)?;
        let mut t = Table::new(&["l", "sample", "ratio", "projection_ratio"]);
        for row in &r.rows {
            t.push(vec![row.l.to_string(), row.sample.to_string(), f(row.ratio), f(row.projection_ratio)]);
        }
        tables.insert("contraction".to_string(), t);
        let per_l: Vec<(usize, f64)> = r.max_ratio.iter().map(|&(l, x)| (l, x * (l as f64).powf(r.exponent))).collect();
        details["contraction"] = json!({
            "max_ratio": r.max_ratio,
            "slope": r.slope,
            "exponent": r.exponent,
            "constant": r.constant,
            "constant_per_l": per_l,
            "relevant_ratio": r.relevant_ratio,
            "projection_constant": r.projection_constant,
        });
    }
    Ok((Estimates::new(), details, tables, Vec::new()))
}

fn wf_check(cfg: &ExperimentConfig, model: &Model) -> Result<Parts, CliError> {
    let (d, l, n) = (cfg.model.d, cfg.model.l, cfg.model.n);
    let geom = Geometry::new(&model.torus, GeometryConstants::new(d)).map_err(numerical)?;
    let q = model.potential.q_v();
    let spec = GaussianSpec::new(&model.torus, &q).map_err(numerical)?;
    let dec = spectral_band_decomposition(&spec, n + 1, l).map_err(numerical)?;
    let system = WeightSystem::calibrated(&geom, &q, &cfg.wf.constants, geom.constants().r, &dec).map_err(numerical)?;
    let g = &geom;
    let at = |c: Vec<i64>| g.polymer_from_coords(0, &[c]);
    let single = at(vec![0; d]).map_err(numerical)?;
    let far = at(vec![2; d]).map_err(numerical)?;
    let next = at((0..d).map(|a| i64::from(a + 1 == d)).collect()).map_err(numerical)?;

    let mut structural = Table::new(&["k", "polymer_size", "structure_residual", "grad_kernel_dim", "scalar_kernel_dim", "kernel_holds"]);
    let mut structure = Vec::new();
    for x in [single.clone(), g.whole(0), g.whole(1)] {
        let r = system.structure_residual(&x).map_err(numerical)?;
        let kc = system.kernel_check(&x).map_err(numerical)?;
        structural.push(vec![x.scale().to_string(), x.size().to_string(), f(r), kc.grad_kernel_dim.to_string(), kc.scalar_kernel_dim.to_string(), kc.holds.to_string()]);
        structure.push(json!({ "k": x.scale(), "size": x.size(), "structure_residual": r, "kernel": kc }));
    }

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
        (10, PropertyInstance::new(single)),
    ];
    let mut props = Table::new(&["property", "k", "holds", "min_eig", "residual", "measured_constant", "mc_agree", "note"]);
    let mut reports = Vec::new();
    let mut estimates = Estimates::new();
    for (prop, inst) in cases {
        let r = system.verify_property(prop, &inst).map_err(numerical)?;
        let opt = |x: Option<f64>| x.map(f).unwrap_or_default();
        props.push(vec![
            prop.to_string(),
            r.k.to_string(),
            r.holds.to_string(),
            opt(r.min_eig),
            opt(r.residual),
            opt(r.measured_constant),
            r.mc.as_ref().map(|m| m.agree.to_string()).unwrap_or_default(),
            r.note.clone(),
        ]);
        if let Some(c) = r.measured_constant {
            estimates.insert(format!("constant/{prop}/k{}", r.k), EstimateValue::scalar(c, 0.0));
        }
        reports.push(r);
    }
    let details = json!({
        "constants": system.constants(),
        "structure": structure,
        "properties": reports,
        "all_hold": reports.iter().all(|r| r.holds),
    });
    let tables = BTreeMap::from([("structure".to_string(), structural), ("properties".to_string(), props)]);
    Ok((estimates, details, tables, Vec::new()))
}
