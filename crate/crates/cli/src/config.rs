//! Experiment configuration. Files are TOML; every table rejects unknown
//! keys so that typos surface as schema errors instead of silent defaults.

use std::path::Path;
use std::sync::Arc;

use gradlab_core::potentials::{builtin_potential, ModelParams, Potential, PotentialConfig};
use gradlab_core::sampler::SamplerConfig;
use gradlab_core::thermo::ChainPlan;
use gradlab_core::torus::TorusSpec;
use gradlab_rg::rg_core::ProbeConfig;
use gradlab_rg::weights::WfConstantsConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Validate,
    Sample,
    SurfaceTension,
    ScalingLimit,
    RgCheck,
    WfCheck,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Validate => "validate",
            Task::Sample => "sample",
            Task::SurfaceTension => "surface-tension",
            Task::ScalingLimit => "scaling-limit",
            Task::RgCheck => "rg-check",
            Task::WfCheck => "wf-check",
        }
    }

    /// Tasks whose output does not depend on any random stream.
    pub fn is_deterministic(&self) -> bool {
        matches!(self, Task::Validate | Task::RgCheck | Task::WfCheck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub l: usize,
    pub n: usize,
    pub d: usize,
    pub beta: f64,
    /// Tilt; zero when omitted.
    #[serde(default)]
    pub u: Option<Vec<f64>>,
    pub potential: PotentialConfig,
    #[serde(default)]
    pub zeta: Option<f64>,
    #[serde(default)]
    pub omega0: Option<f64>,
    #[serde(default)]
    pub omega: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMethod {
    /// Closed form; quadratic potentials only.
    Exact,
    Fluctuation,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceTensionOptions {
    pub methods: Vec<HessianMethod>,
    pub fd_step: f64,
    pub richardson: bool,
    /// When set, also integrate `D_uσ` along this polyline.
    pub ti_path: Option<Vec<Vec<f64>>>,
    pub ti_order: usize,
}

impl Default for SurfaceTensionOptions {
    fn default() -> Self {
        Self { methods: vec![HessianMethod::Fluctuation], fd_step: 0.02, richardson: true, ti_path: None, ti_order: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingOptions {
    pub modes: Vec<Vec<i64>>,
    /// Add the exact Gaussian Laplace transform for quadratic potentials.
    pub exact: bool,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self { modes: Vec::new(), exact: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RgOptions {
    /// Largest polymer size in the geometry suite; 0 skips the suite.
    pub max_size: usize,
    pub probe: Option<ProbeConfig>,
}

impl Default for RgOptions {
    fn default() -> Self {
        Self { max_size: 3, probe: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WfOptions {
    pub constants: WfConstantsConfig,
}

impl Default for WfOptions {
    fn default() -> Self {
        Self { constants: WfConstantsConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_chains")]
    pub chains: usize,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<String>,
    pub model: ModelConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub surface_tension: SurfaceTensionOptions,
    #[serde(default)]
    pub scaling: ScalingOptions,
    #[serde(default)]
    pub rg: RgOptions,
    #[serde(default)]
    pub wf: WfOptions,
}

fn default_chains() -> usize {
    4
}

/// The validated objects a task runs on.
pub struct Model {
    pub torus: TorusSpec,
    pub potential: Arc<dyn Potential>,
    pub params: ModelParams,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Check every precondition that does not need a run, and build the model.
    pub fn validate(&self) -> Result<Model, CliError> {
        let schema = |e: gradlab_core::Error| CliError::Schema(e.to_string());
        let m = &self.model;
        let torus = TorusSpec::new(m.l, m.n, m.d).map_err(schema)?;
        let potential = builtin_potential(&m.potential, m.d).map_err(schema)?;
        let mut params = ModelParams::new(m.beta, m.u.clone().unwrap_or_else(|| vec![0.0; m.d]));
        params.zeta = m.zeta.unwrap_or(params.zeta);
        params.omega0 = m.omega0.unwrap_or(params.omega0);
        params.omega = m.omega.unwrap_or(params.omega);
        params.validate(m.d).map_err(schema)?;
        self.sampler.validate().map_err(schema)?;
        if self.chains == 0 {
            return Err(CliError::Schema("chains must be positive".into()));
        }
        let st = &self.surface_tension;
        if !(st.fd_step > 0.0) || st.ti_order < 2 {
            return Err(CliError::Schema("surface_tension needs fd_step > 0 and ti_order >= 2".into()));
        }
        if let Some(path) = &st.ti_path {
            if path.len() < 2 || path.iter().any(|p| p.len() != m.d) {
                return Err(CliError::Schema(format!("ti_path needs at least two points with {} coordinates", m.d)));
            }
        }
        if self.scaling.modes.iter().any(|k| k.len() != m.d || k.iter().all(|&c| c == 0)) {
            return Err(CliError::Schema(format!("scaling modes must be nonzero with {} entries", m.d)));
        }
        Ok(Model { torus, potential, params })
    }

    pub fn plan(&self) -> ChainPlan {
        ChainPlan::new(self.sampler.clone(), self.chains, self.seed)
    }

    /// Modes for the covariance fit; the unit vectors and all sums `e_i + e_j`
    /// when none are configured.
    pub fn modes(&self) -> Vec<Vec<i64>> {
        if !self.scaling.modes.is_empty() {
            return self.scaling.modes.clone();
        }
        let d = self.model.d;
        let unit = |i: usize| (0..d).map(|a| i64::from(a == i)).collect::<Vec<i64>>();
        let mut out: Vec<Vec<i64>> = (0..d).map(unit).collect();
        for i in 0..d {
            for j in i + 1..d {
                out.push(unit(i).iter().zip(unit(j)).map(|(a, b)| a + b).collect());
            }
        }
        out
    }

    /// Canonical JSON of everything that determines the results. The output
    /// location is excluded so that reruns into fresh directories hash alike.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        serde_json::to_string(&c).expect("config serialises")
    }
}
