use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::DEFAULT_XI_GRID;
use crate::error::{LsapcError, Result};
use crate::fused_lasso::FlConfig;
use crate::gibbs::GibbsSettings;
use crate::model::LsapcConfig;
use crate::sim::{GroundTruthSpec, Shape, StudyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Simulate,
    FitGibbs,
    FitVb,
    FitFl,
    SelectModel,
    Study,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VbSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for VbSettings {
    fn default() -> Self {
        VbSettings {
            tol: 1e-8,
            max_iter: 2_000,
        }
    }
}

impl VbSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(LsapcError::InvalidParameter(format!(
                "VB needs tol > 0 and max_iter >= 1, got tol = {}, max_iter = {}",
                self.tol, self.max_iter
            )));
        }
        Ok(())
    }
}

/// Settings of the `simulate` task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub spec: GroundTruthSpec,
    pub n: usize,
    pub x_sd: f64,
    pub noise_sd: f64,
    /// When set, noise has covariance `noise_sd² B(noise_xi)` and the
    /// dataset carries metadata with `n / slots` sites.
    pub noise_xi: Option<f64>,
    pub slots: usize,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings {
            spec: GroundTruthSpec {
                shape: Shape::ExpBell,
                p: 100,
                support: 14,
                amplitude: 100.0,
            },
            n: 40,
            x_sd: 2.0,
            noise_sd: 200.0,
            noise_xi: None,
            slots: 1,
        }
    }
}

/// One JSON document describing a run. The top-level `seed` is copied into
/// every nested seed by [`ExperimentConfig::resolved`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Option<Task>,
    pub dataset_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub lsapc: LsapcConfig,
    pub gibbs: GibbsSettings,
    /// With `fit-gibbs`, also estimate the log marginal likelihood.
    pub chib: bool,
    pub vb: VbSettings,
    pub fl: FlConfig,
    /// Choose the fused-lasso penalties by cross-validation instead of
    /// using `fl.lambda1` and `fl.lambda2`.
    pub fl_cross_validate: bool,
    pub xi_grid: Vec<f64>,
    pub simulate: SimulateSettings,
    pub study: StudyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: None,
            dataset_path: None,
            output_dir: None,
            seed: 0,
            lsapc: LsapcConfig::default(),
            gibbs: GibbsSettings::default(),
            chib: false,
            vb: VbSettings::default(),
            fl: FlConfig::default(),
            fl_cross_validate: true,
            xi_grid: DEFAULT_XI_GRID.to_vec(),
            simulate: SimulateSettings::default(),
            study: StudyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LsapcError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LsapcError::Config(e.to_string()))
    }

    /// Copy with the top-level seed propagated into nested settings.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.gibbs.seed = c.seed;
        c.study.seed = c.seed;
        c
    }

    /// Checks the sub-configurations the chosen task uses.
    pub fn validate(&self) -> Result<()> {
        let task = self
            .task
            .ok_or_else(|| LsapcError::Config("no task given".into()))?;
        let needs_data = matches!(task, Task::FitGibbs | Task::FitVb | Task::FitFl | Task::SelectModel);
        if needs_data && self.dataset_path.is_none() {
            return Err(LsapcError::Config(format!("task {task:?} needs dataset_path")));
        }
        if self.output_dir.is_none() {
            return Err(LsapcError::Config("output_dir is required".into()));
        }
        let bad = |e: LsapcError| LsapcError::Config(e.to_string());
        match task {
            Task::Simulate => {
                self.simulate.spec.validate().map_err(bad)?;
                if self.simulate.n == 0 || self.simulate.slots == 0 || self.simulate.n % self.simulate.slots != 0 {
                    return Err(LsapcError::Config("simulate.n must be a positive multiple of simulate.slots".into()));
                }
            }
            Task::FitGibbs => {
                self.lsapc.validate().map_err(bad)?;
                self.gibbs.validate().map_err(bad)?;
            }
            Task::FitVb => {
                self.lsapc.validate().map_err(bad)?;
                self.vb.validate().map_err(bad)?;
            }
            Task::FitFl => self.fl.validate().map_err(bad)?,
            Task::SelectModel => {
                self.lsapc.validate().map_err(bad)?;
                self.gibbs.validate().map_err(bad)?;
                self.vb.validate().map_err(bad)?;
                if self.xi_grid.is_empty() {
                    return Err(LsapcError::Config("xi_grid is empty".into()));
                }
            }
            Task::Study => self.study.validate().map_err(bad)?,
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
