//! Run-wide configuration file (TOML) with one table per module.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::experiments::GridConfig;
use crate::likelihood::FitConfig;
use crate::prior::PriorConfig;
use crate::sampler::SamplerConfig;
use crate::score::ScoreConfig;

/// The `[fit]` table. `clamp_zero_sse` left unset resolves per command:
/// on while searching, off when scoring a single model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub restarts: usize,
    pub max_iters: usize,
    pub tolerance: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clamp_zero_sse: Option<bool>,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = FitConfig::default();
        FitSection { restarts: d.restarts, max_iters: d.max_iters, tolerance: d.tolerance, seed: d.seed, clamp_zero_sse: None }
    }
}

impl FitSection {
    pub fn resolve(&self, searching: bool) -> FitConfig {
        FitConfig {
            restarts: self.restarts,
            max_iters: self.max_iters,
            tolerance: self.tolerance,
            seed: self.seed,
            clamp_zero_sse: self.clamp_zero_sse.unwrap_or(searching),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fit: FitSection,
    pub score: ScoreConfig,
    pub sampler: SamplerConfig,
    pub prior: PriorConfig,
    pub ensemble: EnsembleConfig,
    pub experiment: GridConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.resolve(true).validate()?;
        self.sampler.validate()?;
        self.prior.validate()?;
        self.experiment.validate()?;
        if !(self.score.hessian_step > 0.0) {
            return Err(Error::InvalidConfig("score.hessian_step must be positive".into()));
        }
        Ok(())
    }

    /// Applies a master seed to every stochastic component.
    pub fn with_seed(mut self, seed: u64) -> RunConfig {
        self.fit.seed = seed;
        self.sampler.seed = seed;
        self.prior.seed = seed;
        self.ensemble.seed = seed;
        self.experiment.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_unknown_keys() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = RunConfig::from_toml("[sampler]\nsteps = 50\n[fit]\nclamp_zero_sse = false\n").unwrap();
        assert_eq!(partial.sampler.steps, 50);
        assert!(!partial.fit.resolve(true).clamp_zero_sse);
        assert!(RunConfig::default().fit.resolve(true).clamp_zero_sse);
        assert!(!RunConfig::default().fit.resolve(false).clamp_zero_sse);
        assert!(matches!(RunConfig::from_toml("[sampler]\nstepz = 5\n"), Err(Error::InvalidConfig(_))));
        assert!(RunConfig::from_toml("[sampler]\nthin = 0\n").is_err());
    }
}
