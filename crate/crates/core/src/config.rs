//! Run configuration read from `config.toml`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::designer::{DesignConfig, PriorConfig};
use crate::posthoc::{CostConfig, PosthocConfig, QalyConfig, ReliabilityConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// β values evaluated by `design` and `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub betas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            betas: linspace(5.0, 25.0, 11),
        }
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub design: DesignConfig,
    pub prior: PriorConfig,
    pub sweep: SweepConfig,
    pub posthoc: PosthocConfig,
    pub qaly: QalyConfig,
    pub costs: CostConfig,
    pub reliability: ReliabilityConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// One seed drives both the design and the evaluation stages.
    pub fn set_seed(&mut self, seed: u64) {
        self.design.seed = seed;
        self.posthoc.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.design
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.sweep.betas.is_empty() || self.sweep.betas.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(ConfigError::Invalid("sweep.betas must be a non-empty list of finite values >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.posthoc.tau) {
            return Err(ConfigError::Invalid("posthoc.tau must lie in [0, 1]".into()));
        }
        if self.posthoc.k == 0 {
            return Err(ConfigError::Invalid("posthoc.k must be >= 1".into()));
        }
        let r = &self.reliability;
        if !(r.q_new > 0.0 && r.q_new < 1.0 && r.q_existing > 0.0 && r.q_existing < 1.0) {
            return Err(ConfigError::Invalid("downtime probabilities must lie in (0, 1)".into()));
        }
        let c = &self.costs;
        let all = [
            c.drone,
            c.charging_port,
            c.maintenance,
            c.new_site,
            c.personnel,
            c.per_mission,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ConfigError::Invalid("costs must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        assert_eq!(c.sweep.betas.len(), 11);
        assert_eq!(c.sweep.betas[1], 7.0);
        let back = Config::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_overrides() {
        let c = Config::from_toml_str("[design]\nbeta = 3.0\nk = 5\n[prior]\ntheta0 = -2.0\n").unwrap();
        assert_eq!(c.design.beta, 3.0);
        assert_eq!(c.design.k, 5);
        assert_eq!(c.design.eta, 0.2);
        assert_eq!(c.prior.theta0, -2.0);
        assert!(Config::from_toml_str("[design]\nbogus = 1\n").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = Config::default();
        c.sweep.betas.clear();
        assert!(c.validate().is_err());
        let mut c = Config::default();
        c.reliability.q_new = 1.0;
        assert!(c.validate().is_err());
    }
}
