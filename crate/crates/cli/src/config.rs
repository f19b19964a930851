//! Versioned JSON configuration files, one schema per subcommand.

use std::path::Path;

use krsl::batch_solver::{GridAxis, RobustnessScenario, SurfaceCriterion};
use krsl::harness::ExperimentConfig;
use krsl::theory::TheoryConfig;
use krsl::{KrslParams, NoiseModel, RngSpec};
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub const SCHEMA_VERSION: u32 = 1;

/// A problem with the configuration file or flags (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

/// Raw file contents plus the parsed config.
pub struct Loaded<T> {
    pub bytes: Vec<u8>,
    pub config: T,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>, ConfigError> {
    let bytes = std::fs::read(path)
        .map_err(|e| ConfigError(format!("cannot read config `{}`: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| ConfigError(format!("{}: invalid JSON: {e}", path.display())))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(ConfigError(format!(
                "{}: unsupported schema_version {v}, expected {SCHEMA_VERSION}",
                path.display()
            )))
        }
        None => {
            return Err(ConfigError(format!(
                "{}: missing integer field `schema_version`",
                path.display()
            )))
        }
    }
    // Parse from the text again so errors carry line and column numbers.
    let config = serde_json::from_slice(&bytes).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    Ok(Loaded { bytes, config })
}

fn default_burn_in() -> usize {
    100
}

fn yes() -> bool {
    true
}

/// Pairs a roster member with the white-input theory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryPairing {
    pub label: String,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Also iterate the transient recursion (slow for very long runs).
    #[serde(default = "yes")]
    pub transient: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub outlier_variances: Vec<f64>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    #[allow(dead_code)] // checked by `load` before parsing
    pub schema_version: u32,
    #[serde(default)]
    pub description: Option<String>,
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub theory: Vec<TheoryPairing>,
    /// Replace the single experiment by an outlier sweep over this grid.
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyMethod {
    Taylor,
    Exact,
}

fn both_methods() -> Vec<SteadyMethod> {
    vec![SteadyMethod::Taylor, SteadyMethod::Exact]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientSpec {
    pub iterations: usize,
    pub initial_wep: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryFile {
    #[allow(dead_code)] // checked by `load` before parsing
    pub schema_version: u32,
    #[serde(default)]
    pub description: Option<String>,
    pub theory: TheoryConfig,
    #[serde(default)]
    pub transient: Option<TransientSpec>,
    #[serde(default = "both_methods")]
    pub steady_state: Vec<SteadyMethod>,
}

fn both_criteria() -> Vec<SurfaceCriterion> {
    vec![SurfaceCriterion::Krsl, SurfaceCriterion::CLoss]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceFile {
    #[allow(dead_code)] // checked by `load` before parsing
    pub schema_version: u32,
    #[serde(default)]
    pub description: Option<String>,
    pub true_weights: Vec<f64>,
    pub samples: usize,
    pub input: NoiseModel,
    pub noise: NoiseModel,
    /// Inputs use stream `rng.stream`, noise stream `rng.stream + 1`.
    pub rng: RngSpec,
    pub params: KrslParams,
    pub axes: Vec<GridAxis>,
    #[serde(default = "both_criteria")]
    pub criteria: Vec<SurfaceCriterion>,
    /// Relaxation of the fixed-point iteration started from least squares.
    #[serde(default = "unit")]
    pub relaxation: f64,
}

fn unit() -> f64 {
    1.0
}

fn default_max_outlier() -> f64 {
    1e6
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSweep {
    pub instances: usize,
    pub seed: u64,
    #[serde(default = "default_max_outlier")]
    pub max_outlier: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsFile {
    #[allow(dead_code)] // checked by `load` before parsing
    pub schema_version: u32,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub scenarios: Vec<RobustnessScenario>,
    #[serde(default)]
    pub sweep: Option<BoundsSweep>,
}
