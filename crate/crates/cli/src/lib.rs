//! Experiment orchestration for gradlab: configuration, task dispatch and
//! reproducible artifacts (manifest, JSON report, CSV tables, checkpoints).

pub mod compare;
pub mod config;
pub mod output;
pub mod tasks;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use config::{ExperimentConfig, Task};
use output::{sha256_hex, to_json, RunManifest, Timestamps, MANIFEST_SCHEMA};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Schema(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config's task.
    pub task: Option<Task>,
    pub seed: Option<u64>,
    /// Overrides the config's output directory.
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses every core. Results do not depend on it.
    pub workers: Option<usize>,
    pub desk_regime: bool,
    /// Fixed Unix time for the manifest timestamps, for byte-identical
    /// manifests across reruns.
    pub clock: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub report: output::Report,
}

fn now(clock: Option<u64>) -> u64 {
    clock.unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

/// Validate `config`, run its task and write every artifact.
pub fn run(mut config: ExperimentConfig, opts: &RunOptions) -> Result<RunResult, CliError> {
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    let task = opts.task.or(config.task).ok_or_else(|| CliError::Schema("no task given on the command line or in the config".into()))?;
    config.task = Some(task);
    let dir = opts.out.clone().or_else(|| config.output.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("gradlab-out"));
    let model = config.validate()?;
    let config_hash = sha256_hex(config.canonical_json().as_bytes());

    let started = now(opts.clock);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Numerical(format!("thread pool: {e}")))?;
    let out = pool.install(|| tasks::run_task(task, &config, &model, opts.desk_regime, &config_hash))?;
    let digests = output::write_artifacts(&dir, &out)?;
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        task: task.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash,
        seed: config.seed,
        chains: config.chains,
        deterministic: task.is_deterministic(),
        timestamps: Timestamps { started, finished: now(opts.clock) },
        digests,
    };
    std::fs::write(dir.join("manifest.json"), to_json(&manifest))?;
    Ok(RunResult { dir, manifest, report: out.report })
}

/// Compare two report files and write `compare.json` and
/// `tables/compare.csv` under `out` when given.
pub fn compare_files(a: &Path, b: &Path, tol: compare::Tolerance, out: Option<&Path>) -> Result<compare::DiffReport, CliError> {
    let diff = compare::compare_reports(&compare::load_report(a)?, &compare::load_report(b)?, tol)?;
    if let Some(dir) = out {
        let mut t = output::Table::new(&["field", "a", "se_a", "b", "se_b", "gap", "z", "pass"]);
        let f = output::fmt_float;
        for e in &diff.entries {
            t.push(vec![e.field.clone(), f(e.a), f(e.se_a), f(e.b), f(e.se_b), f(e.gap), f(e.z), e.pass.to_string()]);
        }
        std::fs::create_dir_all(dir.join("tables"))?;
        std::fs::write(dir.join("compare.json"), to_json(&diff))?;
        std::fs::write(dir.join("tables/compare.csv"), t.to_csv())?;
    }
    Ok(diff)
}
