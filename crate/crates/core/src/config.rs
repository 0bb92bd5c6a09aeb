//! TOML configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::ClassifierBackend;
use crate::orchestrator::ExperimentPlan;
use crate::platform::{PlatformConfig, PlatformError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub platform_listen: String,
    pub proxy_listen: String,
    /// Platform URL the proxy and remote experiments talk to.
    pub upstream_url: String,
    pub server_workers: usize,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            platform_listen: "127.0.0.1:8080".into(),
            proxy_listen: "127.0.0.1:8081".into(),
            upstream_url: "http://127.0.0.1:8080".into(),
            server_workers: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub trace_dir: PathBuf,
    pub results_dir: PathBuf,
    /// Compression dictionary; the built-in one when unset.
    pub dictionary: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus.jsonl".into(),
            trace_dir: "traces".into(),
            results_dir: "results".into(),
            dictionary: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Plan, corpus profile, calibration, seeds and confidence level.
    pub experiment: ExperimentPlan,
    pub endpoints: Endpoints,
    pub paths: Paths,
    pub classifier: ClassifierBackend,
    /// Concurrent runs; 0 uses every core.
    pub jobs: usize,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let config = Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.into(), message },
            other => other,
        })?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Config =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: PathBuf::new(), message: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.experiment.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.endpoints.server_workers == 0 {
            return Err(ConfigError::Invalid("endpoints.server_workers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn platform_config(&self, seed: u64) -> Result<PlatformConfig, PlatformError> {
        let calibration = self.experiment.resolved_calibration().map_err(|e| PlatformError::Config(e.to_string()))?;
        Ok(PlatformConfig { seed, calibration, sampling: self.experiment.sampling, ..PlatformConfig::default() })
    }

    pub fn jobs(&self) -> usize {
        match self.jobs {
            0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            n => n,
        }
    }
}
