//! Complete run configuration, read from and written to TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio_text::{F0Config, MelConfig, TextMode};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub text_mode: TextMode,
    pub mel: MelConfig,
    pub f0: F0Config,
}

/// Model, data frontend and training settings. Missing sections and keys
/// take their defaults; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.mel.validate()?;
        self.train.validate()?;
        if self.model.n_mels != self.data.mel.n_mels {
            return Err(Error::Config(format!(
                "model.n_mels {} differs from data.mel.n_mels {}",
                self.model.n_mels, self.data.mel.n_mels
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Small geometry for desk-scale runs: `feature_dim` channels and the
    /// given block counts, with matching mel bins.
    pub fn desk(feature_dim: usize, enc_blocks: usize, dec_blocks: usize) -> Self {
        Config {
            model: ModelConfig::reduced(feature_dim, enc_blocks, dec_blocks),
            ..Config::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = Config::default();
        let text = c.to_toml();
        assert_eq!(Config::from_toml(&text).unwrap(), c);
        assert!(text.contains("[model.encoder]"));
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = Config::from_toml("[train]\nsteps = 7\n").unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.model, ModelConfig::full_basic());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            Config::from_toml("[train]\nstepz = 7\n"),
            Err(Error::Config(_))
        ));
        assert!(Config::from_toml("[nope]\n").is_err());
        let mut c = Config::default();
        c.model.n_mels = 40;
        assert!(Config::from_toml(&c.to_toml()).is_err());
    }
}
