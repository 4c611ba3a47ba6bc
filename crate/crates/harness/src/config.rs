//! Experiment configuration, read from TOML.
//!
//! Schedule lengths are exact rationals written as strings (`"1/10"`), so the
//! step and window counts are exact integers.

use bglab_core::fields::{catalog, mean_free_project, FieldError, TestFunction};
use bglab_core::pseudo::{SamplingSchedule, ScheduleError};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid schedule: {0}")]
    Schedule(#[from] ScheduleError),
    #[error("test function: {0}")]
    Function(#[from] FieldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Covariance,
    Invariants,
    Trees,
    GeometryScaling,
    Clusters,
}

/// Gas parameters. `mu` defaults to the Boltzmann-Grad value for each `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasConfig {
    pub eps: Vec<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default = "yes")]
    pub scaling_locked: bool,
}

fn yes() -> bool {
    true
}

/// A catalog name or a velocity polynomial `[[c, p1, .., pd], ..]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionSpec {
    Named(String),
    Polynomial { poly: Vec<Vec<f64>> },
}

impl FunctionSpec {
    /// Resolve against the catalog and project to mean zero.
    pub fn build<const D: usize>(&self) -> Result<TestFunction<D>, ConfigError> {
        let f = match self {
            FunctionSpec::Named(name) => match name.as_str() {
                "v1" => catalog::v1(),
                "v2" if D >= 2 => catalog::velocity(1),
                "v3" if D >= 3 => catalog::velocity(2),
                "energy" | "|v|^2-d" => catalog::energy(),
                "cos_x1_v1" => catalog::cos_x1_v1(),
                "shear" => catalog::shear(),
                "heat_flux" => catalog::heat_flux(),
                other => return Err(ConfigError::Invalid(format!("unknown test function `{other}`"))),
            },
            FunctionSpec::Polynomial { poly } => {
                let mut terms = Vec::with_capacity(poly.len());
                for row in poly {
                    if row.len() != D + 1 {
                        return Err(ConfigError::Invalid(format!(
                            "polynomial term {row:?} needs a coefficient and {D} exponents"
                        )));
                    }
                    let mut p = [0u32; D];
                    for (k, e) in row[1..].iter().enumerate() {
                        if *e < 0.0 || e.fract() != 0.0 || *e > 12.0 {
                            return Err(ConfigError::Invalid(format!("bad exponent {e}")));
                        }
                        p[k] = *e as u32;
                    }
                    terms.push((row[0], p));
                }
                catalog::polynomial(terms)?
            }
        };
        Ok(mean_free_project(&f)?)
    }
}

impl std::fmt::Display for FunctionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FunctionSpec::Named(n) => write!(f, "{n}"),
            FunctionSpec::Polynomial { poly } => write!(f, "poly{poly:?}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    pub g0: FunctionSpec,
    pub h: FunctionSpec,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub theta: String,
    pub tau: String,
    pub delta: String,
    pub gamma: usize,
    pub v_max: f64,
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<SamplingSchedule, ConfigError> {
        Ok(SamplingSchedule::new(
            rational(&self.theta)?,
            rational(&self.tau)?,
            rational(&self.delta)?,
            self.gamma,
            self.v_max,
        )?)
    }
}

pub fn rational(s: &str) -> Result<Ratio<i64>, ConfigError> {
    s.trim()
        .parse::<Ratio<i64>>()
        .map_err(|e| ConfigError::Invalid(format!("`{s}` is not an exact rational: {e}")))
}

/// Discretization of the deterministic solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticConfig {
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_nx")]
    pub nx: usize,
    /// Tree Monte Carlo samples per prediction time; 0 disables it.
    #[serde(default)]
    pub tree_samples: usize,
    #[serde(default = "default_m_max")]
    pub m_max: usize,
}

fn default_nodes() -> usize {
    10
}
fn default_degree() -> usize {
    6
}
fn default_nx() -> usize {
    8
}
fn default_m_max() -> usize {
    3
}

impl Default for KineticConfig {
    fn default() -> Self {
        Self {
            nodes: default_nodes(),
            degree: default_degree(),
            nx: default_nx(),
            tree_samples: 0,
            m_max: default_m_max(),
        }
    }
}

impl KineticConfig {
    pub fn grid_id(&self) -> String {
        format!("n{}-P{}-x{}", self.nodes, self.degree, self.nx)
    }
}

/// Recollision-measure sweep: a two-creation tree on the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// `direct`, `periodic` or `any`.
    #[serde(default = "default_kind")]
    pub recollision: String,
    /// Gas replicas per `eps` for the cluster-violation frequency; 0 skips it.
    #[serde(default)]
    pub cluster_replicas: usize,
}

fn default_samples() -> usize {
    100_000
}
fn default_theta() -> f64 {
    0.5
}
fn default_kind() -> String {
    "direct".into()
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            theta: default_theta(),
            recollision: default_kind(),
            cluster_replicas: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreesConfig {
    #[serde(default = "default_n_max")]
    pub n_max: u32,
    #[serde(default = "default_nm_max")]
    pub nm_max: u32,
    #[serde(default = "default_penrose")]
    pub penrose_samples: usize,
}

fn default_n_max() -> u32 {
    6
}
fn default_nm_max() -> u32 {
    7
}
fn default_penrose() -> usize {
    10_000
}

impl Default for TreesConfig {
    fn default() -> Self {
        Self {
            n_max: default_n_max(),
            nm_max: default_nm_max(),
            penrose_samples: default_penrose(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub replicas: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub gas: Option<GasConfig>,
    pub observables: Option<ObservableConfig>,
    pub schedule: Option<ScheduleConfig>,
    #[serde(default)]
    pub kinetic: KineticConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
    #[serde(default)]
    pub trees: TreesConfig,
}

fn default_dimension() -> usize {
    3
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Ok((Self::from_toml(&text)?, text))
    }

    pub fn gas(&self) -> Result<&GasConfig, ConfigError> {
        self.gas.as_ref().ok_or_else(|| ConfigError::Invalid("missing [gas] table".into()))
    }

    pub fn observables(&self) -> Result<&ObservableConfig, ConfigError> {
        self.observables
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("missing [observables] table".into()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(2..=3).contains(&self.dimension) {
            return Err(ConfigError::Invalid(format!("dimension {} not in 2..=3", self.dimension)));
        }
        if let Some(g) = &self.gas {
            if g.eps.is_empty() {
                return Err(ConfigError::Invalid("empty eps sweep".into()));
            }
            match (g.scaling_locked, g.mu) {
                (true, Some(_)) => {
                    return Err(ConfigError::Invalid("mu is fixed by eps when scaling_locked".into()));
                }
                (false, None) => return Err(ConfigError::Invalid("mu required when not scaling_locked".into())),
                _ => {}
            }
            for &e in &g.eps {
                if !(0.0..0.5).contains(&e) || (g.scaling_locked && e == 0.0) {
                    return Err(ConfigError::Invalid(format!("eps = {e}")));
                }
            }
        }
        if let Some(s) = &self.schedule {
            s.build()?;
        }
        match self.kind {
            ExperimentKind::Covariance => {
                if self.replicas < 2 {
                    return Err(ConfigError::Invalid(format!("need at least two replicas, got {}", self.replicas)));
                }
                self.gas()?;
                let o = self.observables()?;
                if o.times.is_empty() || o.times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
                    return Err(ConfigError::Invalid("time grid must be non-empty and non-negative".into()));
                }
            }
            ExperimentKind::GeometryScaling | ExperimentKind::Clusters => {
                if self.gas()?.eps.len() < 3 {
                    return Err(ConfigError::Invalid("a scaling sweep needs at least three eps values".into()));
                }
                if self.scaling.samples < 2 {
                    return Err(ConfigError::Invalid("need at least two samples".into()));
                }
                if self.kind == ExperimentKind::Clusters && self.schedule.is_none() {
                    return Err(ConfigError::Invalid("cluster study needs a [schedule]".into()));
                }
                if !["direct", "periodic", "any"].contains(&self.scaling.recollision.as_str()) {
                    return Err(ConfigError::Invalid(format!("recollision kind `{}`", self.scaling.recollision)));
                }
            }
            ExperimentKind::Trees | ExperimentKind::Invariants => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COV: &str = r#"
kind = "covariance"
master_seed = 7
replicas = 100
[gas]
eps = [0.1]
[observables]
g0 = "v1"
h = { poly = [[1.0, 1, 0, 0]] }
times = [0.0, 0.5]
[schedule]
theta = "1"
tau = "1/2"
delta = "1/10"
gamma = 3
v_max = 10.0
"#;

    #[test]
    fn parses_rationals_and_functions() {
        let c = ExperimentConfig::from_toml(COV).unwrap();
        let s = c.schedule.as_ref().unwrap().build().unwrap();
        assert_eq!((s.k_steps(), s.r_windows()), (2, 5));
        let h = c.observables().unwrap().h.build::<3>().unwrap();
        assert!(h.is_mean_free());
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let bad = COV.replace("replicas = 100", "replicas = 0");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = COV.replace("tau = \"1/2\"", "tau = \"1/3\"").replace("delta = \"1/10\"", "delta = \"1/4\"");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(ConfigError::Schedule(_))));
        let bad = COV.replace("eps = [0.1]", "eps = [0.1]\nmu = 5.0");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        assert!(rational("0.5").is_err());
        assert!(FunctionSpec::Named("v9".into()).build::<3>().is_err());
    }
}
