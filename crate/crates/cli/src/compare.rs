//! Entry-by-entry comparison of two reports' estimate sections.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::output::Report;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    /// Largest accepted `|a − b| / sqrt(se_a² + se_b²)`.
    pub z_max: f64,
    /// Gaps at or below this pass regardless of the error bars.
    pub abs_tol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { z_max: 3.0, abs_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    /// Estimate name plus index path, e.g. `hessian[0][1]`.
    pub field: String,
    pub a: f64,
    pub b: f64,
    pub se_a: f64,
    pub se_b: f64,
    pub gap: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub task_a: String,
    pub task_b: String,
    pub tolerance: Tolerance,
    pub entries: Vec<DiffEntry>,
    /// Estimates present in only one of the reports.
    pub unmatched: Vec<String>,
    pub all_pass: bool,
}

fn leaves(mean: &Value, se: &Value, path: String, out: &mut Vec<(String, f64, f64)>) -> Result<(), String> {
    match (mean, se) {
        (Value::Array(m), Value::Array(s)) if m.len() == s.len() => {
            for (i, (mi, si)) in m.iter().zip(s).enumerate() {
                leaves(mi, si, format!("{path}[{i}]"), out)?;
            }
            Ok(())
        }
        (Value::Number(m), Value::Number(s)) => {
            out.push((path, m.as_f64().unwrap_or(f64::NAN), s.as_f64().unwrap_or(f64::NAN)));
            Ok(())
        }
        _ => Err(format!("{path}: mean and se do not have the same shape")),
    }
}

pub fn compare_reports(a: &Report, b: &Report, tol: Tolerance) -> Result<DiffReport, CliError> {
    if a.schema != b.schema {
        return Err(CliError::Schema(format!("report schemas differ: {} vs {}", a.schema, b.schema)));
    }
    let mut entries = Vec::new();
    let mut unmatched = Vec::new();
    for (name, ea) in &a.estimates {
        let Some(eb) = b.estimates.get(name) else {
            unmatched.push(name.clone());
            continue;
        };
        let (mut la, mut lb) = (Vec::new(), Vec::new());
        leaves(&ea.mean, &ea.se, name.clone(), &mut la).map_err(CliError::Schema)?;
        leaves(&eb.mean, &eb.se, name.clone(), &mut lb).map_err(CliError::Schema)?;
        let shape = |l: &[(String, f64, f64)]| l.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
        if shape(&la) != shape(&lb) {
            return Err(CliError::Schema(format!("estimate {name} has different shapes in the two reports")));
        }
        for ((field, ma, sa), (_, mb, sb)) in la.into_iter().zip(lb) {
            let gap = (ma - mb).abs();
            let joint = sa.hypot(sb);
            let z = if gap == 0.0 { 0.0 } else { gap / joint };
            let pass = gap <= (tol.z_max * joint).max(tol.abs_tol);
            entries.push(DiffEntry { field, a: ma, b: mb, se_a: sa, se_b: sb, gap, z, pass });
        }
    }
    unmatched.extend(b.estimates.keys().filter(|k| !a.estimates.contains_key(*k)).cloned());
    if entries.is_empty() {
        return Err(CliError::Schema("the reports share no estimates".into()));
    }
    let all_pass = entries.iter().all(|e| e.pass);
    Ok(DiffReport { task_a: a.task.clone(), task_b: b.task.clone(), tolerance: tol, entries, unmatched, all_pass })
}

pub fn load_report(path: &std::path::Path) -> Result<Report, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Schema(format!("{}: not a report: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::output::{EstimateValue, REPORT_SCHEMA};

    fn report(task: &str, est: &[(&str, EstimateValue)]) -> Report {
        Report {
            schema: REPORT_SCHEMA.into(),
            task: task.into(),
            config_hash: String::new(),
            estimates: est.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            details: Value::Null,
        }
    }

    #[test]
    fn identical_reports_pass() {
        let h = EstimateValue::matrix(&[vec![1.3, 0.0], vec![0.0, 1.0]], &[vec![0.01, 0.02], vec![0.02, 0.01]]);
        let a = report("surface-tension", &[("hessian", h)]);
        let d = compare_reports(&a, &a, Tolerance::default()).unwrap();
        assert!(d.all_pass && d.entries.len() == 4 && d.entries.iter().all(|e| e.z == 0.0));
    }

    #[test]
    fn z_scores_and_failures() {
        let a = report("surface-tension", &[("hessian", EstimateValue::matrix(&[vec![1.30]], &[vec![0.003]]))]);
        let b = report("scaling-limit", &[("hessian", EstimateValue::matrix(&[vec![1.32]], &[vec![0.004]]))]);
        let d = compare_reports(&a, &b, Tolerance::default()).unwrap();
        assert!((d.entries[0].z - 4.0).abs() < 1e-9);
        assert!(!d.all_pass);
        assert_eq!(d.entries[0].field, "hessian[0][0]");
    }

    #[test]
    fn mismatched_schemas_are_errors() {
        let a = report("x", &[("hessian", EstimateValue::scalar(1.0, 0.1))]);
        let mut b = a.clone();
        b.schema = "other/2".into();
        assert!(matches!(compare_reports(&a, &b, Tolerance::default()), Err(CliError::Schema(_))));
        let c = report("x", &[("hessian", EstimateValue::vector(&[1.0], &[0.1]))]);
        assert!(compare_reports(&a, &c, Tolerance::default()).is_err());
        let e = report("x", &[("other", EstimateValue::scalar(1.0, 0.1))]);
        assert!(compare_reports(&a, &e, Tolerance::default()).is_err());
    }
}
