use std::path::{Path, PathBuf};

use corrspec::covariance_kernel::CovarianceFunction;
use corrspec::field_models::FieldModel;
use corrspec::harness::{ConcentrationSettings, EnsembleKind, ExperimentConfig};
use corrspec::limit_solver::SolverConfig;
use corrspec::ensembles::WignerMode;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Solve,
    Compare,
    Universality,
    Concentration,
    Selftest,
}

/// Uniform real grid for solver output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl EnergyGrid {
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        (0..self.count)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<FieldModel>,
    /// JSON file holding the model, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_file: Option<PathBuf>,
    /// Covariance given directly, for `solve` without a field model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<CovarianceFunction>,
    #[serde(default = "default_ensemble")]
    pub ensemble: EnsembleKind,
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_z_points")]
    pub z_points: Vec<Complex64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energies: Option<EnergyGrid>,
    #[serde(default = "default_levy_threshold")]
    pub levy_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<ConcentrationSettings>,
}

fn default_ensemble() -> EnsembleKind {
    EnsembleKind::Wigner {
        mode: WignerMode::LowerTriangle,
    }
}

fn default_replicates() -> usize {
    1
}

fn default_z_points() -> Vec<Complex64> {
    vec![Complex64::i()]
}

fn default_eta() -> f64 {
    1e-3
}

fn default_levy_threshold() -> f64 {
    0.05
}

impl RunConfig {
    /// Parses and resolves a config file; every failure is a validation error.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if let Some(file) = cfg.model_file.take() {
            if cfg.model.is_some() {
                return Err(CliError::Validation("give either `model` or `model_file`, not both".into()));
            }
            let full = path.parent().unwrap_or(Path::new(".")).join(&file);
            let text = std::fs::read_to_string(&full)
                .map_err(|e| CliError::Validation(format!("model_file {}: {e}", full.display())))?;
            cfg.model = Some(
                serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", full.display())))?,
            );
        }
        Ok(cfg)
    }

    pub fn model(&self) -> Result<&FieldModel, CliError> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::Validation(format!("command {:?} needs a `model`", self.command)))
    }

    /// The harness view of this config.
    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let cfg = ExperimentConfig {
            model: self.model()?.clone(),
            ensemble: self.ensemble,
            sizes: self.sizes.clone(),
            replicates: self.replicates,
            seed: self.seed,
            z_points: self.z_points.clone(),
            solver: self.solver.clone(),
            eta: self.eta,
            levy_threshold: self.levy_threshold,
            concentration: self.concentration.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
