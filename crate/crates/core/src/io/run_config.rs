//! Run configuration (TOML): kernel ladder, integrator, optimizer, data
//! term, probe grid, output, seed. CLI flags mirror these keys one to one
//! and override them; environment variables are never consulted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::Scheme;
use crate::kernel::{ConfigError, ScaleConfig};
use crate::shooting::{OptimizeOptions, ShootParams};

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional cross-check against the points file.
    #[serde(default)]
    pub dim: Option<usize>,
    /// Seed for synthetic-instance generation (`check` suites).
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub kernel: KernelSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub probe: Option<ProbeSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    42
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    /// Kernel widths, coarse to fine, strictly decreasing.
    pub sigmas: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_scheme() -> String {
    "rk4".into()
}

fn default_steps() -> usize {
    100
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            scheme: default_scheme(),
            steps: default_steps(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_armijo_c1")]
    pub armijo_c1: f64,
    #[serde(default = "default_shrink")]
    pub shrink: f64,
    #[serde(default = "default_max_backtracks")]
    pub max_backtracks: usize,
    #[serde(default = "default_initial_step")]
    pub initial_step: f64,
}

fn default_max_iters() -> usize {
    500
}
fn default_grad_tol() -> f64 {
    1e-8
}
fn default_armijo_c1() -> f64 {
    1e-4
}
fn default_shrink() -> f64 {
    0.5
}
fn default_max_backtracks() -> usize {
    40
}
fn default_initial_step() -> f64 {
    1.0
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            max_iters: default_max_iters(),
            grad_tol: default_grad_tol(),
            armijo_c1: default_armijo_c1(),
            shrink: default_shrink(),
            max_backtracks: default_max_backtracks(),
            initial_step: default_initial_step(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default = "default_data_weight")]
    pub data_weight: f64,
    #[serde(default = "default_sim_enabled")]
    pub sim_enabled: bool,
}

fn default_data_weight() -> f64 {
    1.0
}
fn default_sim_enabled() -> bool {
    true
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            data_weight: default_data_weight(),
            sim_enabled: default_sim_enabled(),
        }
    }
}

/// Probe grid: axis-aligned bounds, points per axis, 1-based scale label
/// (defaults to the finest scale).
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub scale: Option<usize>,
}

fn default_resolution() -> usize {
    5
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: String,
}

fn default_directory() -> String {
    "out".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_directory(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("kernel ladder invalid: {0}")]
    Kernel(#[from] ConfigError),
    #[error("integrator steps must be >= 1")]
    NoSteps,
    #[error("unknown scheme '{0}', expected euler|rk4")]
    BadScheme(String),
    #[error("data weight must be > 0 and finite, got {0}")]
    BadDataWeight(f64),
    #[error("optimizer field {field} must be positive, got {value}")]
    BadOptimizer { field: &'static str, value: f64 },
    #[error("config dim = {config} but points file has dim = {points}")]
    DimDisagrees { config: usize, points: usize },
    #[error("config has {config} sigmas but points file declares {points} scales")]
    ScaleCountDisagrees { config: usize, points: usize },
    #[error("probe bounds must satisfy min[i] <= max[i] (axis {axis}: {min} > {max})")]
    BadProbeBounds { axis: usize, min: f64, max: f64 },
    #[error("probe bounds have dimension {got}, expected {expected}")]
    BadProbeDim { got: usize, expected: usize },
    #[error("probe resolution must be >= 1")]
    BadProbeResolution,
    #[error("probe scale {got} out of range 1..={max}")]
    BadProbeScale { got: usize, max: usize },
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigFileError> {
        let config: RunConfig = toml::from_str(text)?;
        Ok(config)
    }

    /// Validates against the geometry of a loaded points file and produces
    /// the kernel ladder.
    pub fn scale_config(&self, dim: usize, scales: usize) -> Result<ScaleConfig, ConfigFileError> {
        if let Some(config_dim) = self.dim {
            if config_dim != dim {
                return Err(ConfigFileError::DimDisagrees {
                    config: config_dim,
                    points: dim,
                });
            }
        }
        if self.kernel.sigmas.len() != scales {
            return Err(ConfigFileError::ScaleCountDisagrees {
                config: self.kernel.sigmas.len(),
                points: scales,
            });
        }
        Ok(ScaleConfig::new(dim, self.kernel.sigmas.clone())?)
    }

    pub fn scheme(&self) -> Result<Scheme, ConfigFileError> {
        self.integrator
            .scheme
            .parse()
            .map_err(|_| ConfigFileError::BadScheme(self.integrator.scheme.clone()))
    }

    pub fn shoot_params(&self) -> Result<ShootParams, ConfigFileError> {
        if self.integrator.steps == 0 {
            return Err(ConfigFileError::NoSteps);
        }
        Ok(ShootParams {
            steps: self.integrator.steps,
            scheme: self.scheme()?,
        })
    }

    pub fn optimize_options(&self) -> Result<OptimizeOptions, ConfigFileError> {
        let check_positive = |field: &'static str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(value)
            } else {
                Err(ConfigFileError::BadOptimizer { field, value })
            }
        };
        if !(self.problem.data_weight > 0.0) || !self.problem.data_weight.is_finite() {
            return Err(ConfigFileError::BadDataWeight(self.problem.data_weight));
        }
        Ok(OptimizeOptions {
            shoot: self.shoot_params()?,
            max_iters: self.optimizer.max_iters,
            grad_tol: check_positive("grad_tol", self.optimizer.grad_tol)?,
            armijo_c1: check_positive("armijo_c1", self.optimizer.armijo_c1)?,
            shrink: check_positive("shrink", self.optimizer.shrink)?,
            max_backtracks: self.optimizer.max_backtracks,
            initial_step: check_positive("initial_step", self.optimizer.initial_step)?,
        })
    }

    /// Validates the probe section, returning bounds, resolution, and the
    /// 0-based probe scale.
    pub fn probe_grid(
        &self,
        dim: usize,
        scales: usize,
    ) -> Result<Option<(Vec<f64>, Vec<f64>, usize, usize)>, ConfigFileError> {
        let Some(probe) = &self.probe else {
            return Ok(None);
        };
        if probe.min.len() != dim {
            return Err(ConfigFileError::BadProbeDim {
                got: probe.min.len(),
                expected: dim,
            });
        }
        if probe.max.len() != dim {
            return Err(ConfigFileError::BadProbeDim {
                got: probe.max.len(),
                expected: dim,
            });
        }
        for axis in 0..dim {
            if probe.min[axis] > probe.max[axis] {
                return Err(ConfigFileError::BadProbeBounds {
                    axis,
                    min: probe.min[axis],
                    max: probe.max[axis],
                });
            }
        }
        if probe.resolution == 0 {
            return Err(ConfigFileError::BadProbeResolution);
        }
        let scale_label = probe.scale.unwrap_or(scales);
        if !(1..=scales).contains(&scale_label) {
            return Err(ConfigFileError::BadProbeScale {
                got: scale_label,
                max: scales,
            });
        }
        Ok(Some((
            probe.min.clone(),
            probe.max.clone(),
            probe.resolution,
            scale_label - 1,
        )))
    }
}
