//! Experiment configuration file (TOML).
//!
//! ```toml
//! profiles = "profiles.csv"   # relative to this file; built-in set if absent
//!
//! [cluster]
//! max_capacity = 20
//!
//! [learning]
//! replay_offsets = [0, 24]
//!
//! [provisioning]
//! kk = 5
//!
//! [simulation]
//! seed = 7
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::LearningConfig;
use crate::model::ClusterConfig;
use crate::policy::ProvisioningParams;
use crate::traces::{builtin_profiles, load_profiles, ProfileSet};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Relative Gaussian noise applied to forecasts seen by policies.
    pub forecast_noise_sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<PathBuf>,
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub learning: LearningConfig,
    #[serde(default)]
    pub provisioning: ProvisioningParams,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

impl ExperimentConfig {
    pub fn new(cluster: ClusterConfig) -> Self {
        ExperimentConfig {
            profiles: None,
            cluster,
            learning: LearningConfig::default(),
            provisioning: ProvisioningParams::default(),
            simulation: SimulationConfig::default(),
        }
    }

    /// Read and validate `path`; a relative `profiles` path is resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(p) = config.profiles.as_mut() {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.provisioning.validate().map_err(Error::Config)?;
        if self.learning.window_slots == 0 {
            return Err(Error::Config("learning.window_slots must be positive".into()));
        }
        if !(self.simulation.forecast_noise_sigma.is_finite() && self.simulation.forecast_noise_sigma >= 0.0) {
            return Err(Error::Config("simulation.forecast_noise_sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Profiles from the configured file, or the built-in set.
    pub fn profile_set(&self) -> Result<ProfileSet> {
        match &self.profiles {
            Some(p) => load_profiles(p),
            None => Ok(builtin_profiles()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
