use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::AdaptConfig;
use crate::datasets::SyntheticSpec;
use crate::error::{PdaError, Result};
use crate::model::Activation;
use crate::source_trainer::SourcePhaseConfig;

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "PDA_SEED";

/// Where the source and target sets come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic(SyntheticSpec),
    Files { source: PathBuf, target: PathBuf },
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_d_z() -> usize {
    32
}
fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_d_z")]
    pub d_z: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            d_z: default_d_z(),
            activation: default_activation(),
        }
    }
}

impl ModelConfig {
    /// Layer widths from `input_dim` to the code dimension.
    pub fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(self.d_z);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub source: SourcePhaseConfig,
    #[serde(default)]
    pub adapt: AdaptConfig,
    /// Artifacts are written here when set.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses a JSON document and propagates the seed into both phases.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text)?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    /// Reads a config file, applying the seed override from the environment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(seed) = seed_override()? {
            cfg.set_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.source.seed = seed;
        self.adapt.seed = seed;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that does not need the data loaded.
    pub fn validate(&self) -> Result<()> {
        if self.model.d_z == 0 || self.model.hidden.contains(&0) {
            return Err(PdaError::Config("layer widths must be positive".into()));
        }
        self.source.validate()?;
        if let DataConfig::Synthetic(spec) = &self.data {
            spec.validate()?;
            self.adapt.validate(spec.k_s)?;
        }
        Ok(())
    }
}

/// The seed named by `PDA_SEED`, if set.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| PdaError::Config(format!("{SEED_ENV}={v:?} is not a seed"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(PdaError::Config(format!("{SEED_ENV}: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 7,
        "data": {"synthetic": {"k_s": 4, "k_t": 2, "d_x": 3,
                 "source_per_class": 5, "target_per_class": 5, "seed": 1}}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.model.dims(3), vec![3, 64, 64, 32]);
        assert_eq!(cfg.source.eta, 1.5);
        assert_eq!((cfg.adapt.n_a, cfg.adapt.n_e, cfg.adapt.n_cl), (10, 3, 3));
        assert_eq!((cfg.adapt.alpha, cfg.adapt.beta), (0.5, 1.5));
        assert_eq!((cfg.source.seed, cfg.adapt.seed), (7, 7));
        assert!(cfg.output_dir.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = MINIMAL.replace("\"seed\": 7", "\"seed\": 7, \"alpah\": 0.1");
        assert!(matches!(
            ExperimentConfig::from_json(&typo),
            Err(PdaError::Config(_))
        ));
        let nested = r#"{"seed": 1, "data": {"files": {"source": "a", "target": "b"}},
                         "adapt": {"n_e": 2, "bta": 1.0}}"#;
        assert!(ExperimentConfig::from_json(nested).is_err());
    }

    #[test]
    fn config_round_trips() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn validation_catches_impossible_ensembles() {
        // 3 members x 3 labels cannot fit in the 3 complement classes of K_s=4
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert!(matches!(cfg.validate(), Err(PdaError::Config(_))));
        let mut ok = cfg.clone();
        ok.adapt.n_e = 1;
        ok.validate().unwrap();
    }
}
