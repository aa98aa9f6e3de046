//! Experiment configuration files.
//!
//! Configs are TOML with an explicit `schema_version`. Unknown keys are
//! rejected; omitted training, window and run settings take their defaults.
//! Validation errors carry the dotted path of the offending field.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel_sim::{AttackConfig, OnOffModel, SensingConfig};
use crate::detector::WindowConfig;
use crate::error::{Error, Result};
use crate::model::TrainConfig;
use crate::network::DetectorKind;

pub const SCHEMA_VERSION: u32 = 1;

pub const SIMPLE_CFG: &str = include_str!("../configs/simple.cfg");
pub const COMPLEX_CFG: &str = include_str!("../configs/complex.cfg");

fn default_hidden() -> usize {
    32
}
fn default_arch() -> DetectorKind {
    DetectorKind::Lstm3
}
fn default_train_slots() -> usize {
    100_000
}
fn default_test_slots() -> usize {
    20_000
}
fn default_seed() -> u64 {
    42
}
fn default_seeds() -> usize {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    #[serde(default = "default_arch")]
    pub arch: DetectorKind,
    /// Hidden width of every recurrent layer.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            arch: default_arch(),
            hidden: default_hidden(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Attack-free slots used for training.
    #[serde(default = "default_train_slots")]
    pub train_slots: usize,
    /// Length of each held-out series (normal and contaminated).
    #[serde(default = "default_test_slots")]
    pub test_slots: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_slots: default_train_slots(),
            test_slots: default_test_slots(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            seeds: default_seeds(),
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub model: OnOffModel,
    pub sensing: SensingConfig,
    pub attack: AttackConfig,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub detector: DetectorSpec,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::invalid(
                "name",
                "must be non-empty and use only [A-Za-z0-9_-]",
            ));
        }
        self.model.validate("model.")?;
        self.sensing.validate("sensing.")?;
        self.attack.validate("attack.")?;
        self.window.validate("window.")?;
        if self.detector.hidden == 0 {
            return Err(Error::invalid("detector.hidden", "must be >= 1"));
        }
        self.training.validate("training.")?;
        let min_slots = self.window.input_len + self.window.compare_len;
        if self.data.train_slots < min_slots {
            return Err(Error::invalid(
                "data.train_slots",
                format!("must be >= {min_slots}"),
            ));
        }
        if self.data.test_slots < min_slots {
            return Err(Error::invalid(
                "data.test_slots",
                format!("must be >= {min_slots}"),
            ));
        }
        if self.run.seeds == 0 {
            return Err(Error::invalid("run.seeds", "must be >= 1"));
        }
        Ok(())
    }

    /// Parses and validates config text; `origin` names the source in errors.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string().trim_end().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn simple() -> Self {
        Self::from_toml(SIMPLE_CFG, Path::new("simple.cfg")).expect("bundled config is valid")
    }

    pub fn complex() -> Self {
        Self::from_toml(COMPLEX_CFG, Path::new("complex.cfg")).expect("bundled config is valid")
    }

    /// SHA-256 of the canonical JSON form, ignoring run settings.
    pub fn digest(&self) -> String {
        let canonical = serde_json::json!({
            "schema_version": self.schema_version,
            "name": self.name,
            "model": self.model,
            "sensing": self.sensing,
            "attack": self.attack,
            "window": self.window,
            "detector": self.detector,
            "training": self.training,
            "data": self.data,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_match_builtin_models() {
        let simple = ExperimentConfig::simple();
        assert_eq!(simple.model, OnOffModel::simple());
        assert_eq!(
            simple.sensing,
            SensingConfig {
                t_ob: 0.01,
                t_re: 0.24
            }
        );
        assert_eq!(simple.attack.impulse_probability, 0.3);
        let complex = ExperimentConfig::complex();
        assert_eq!(complex.model, OnOffModel::complex());
        assert_eq!(
            complex.sensing,
            SensingConfig {
                t_ob: 0.01,
                t_re: 0.99
            }
        );
        assert_eq!(complex.training, TrainConfig::default());
        assert_eq!(complex.detector, DetectorSpec::default());
        assert_eq!(complex.data, DataConfig::default());
        assert_ne!(simple.digest(), complex.digest());
    }

    #[test]
    fn bad_weights_name_the_field() {
        let text = SIMPLE_CFG.replace(
            "weights = [0.5, 0.5]\nshapes = [1, 1]",
            "weights = [0.5, 0.4]\nshapes = [1, 1]",
        );
        assert_ne!(text, SIMPLE_CFG);
        let err = ExperimentConfig::from_toml(&text, Path::new("x.cfg")).unwrap_err();
        assert!(err.to_string().contains("model.on.weights"), "{err}");
        assert!(err.is_validation());
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let text = SIMPLE_CFG.replace("[sensing]", "[sensing]\nt_foo = 1.0");
        let err = ExperimentConfig::from_toml(&text, Path::new("x.cfg")).unwrap_err();
        assert!(err.to_string().contains("t_foo"), "{err}");
        let text = SIMPLE_CFG.replace("schema_version = 1", "schema_version = 2");
        let err = ExperimentConfig::from_toml(&text, Path::new("x.cfg")).unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
    }

    #[test]
    fn omitted_sections_take_defaults() {
        let text = "schema_version = 1\nname = \"tiny\"\n\
                    [model.on]\nweights = [1.0]\nshapes = [1]\nscales = [1.0]\n\
                    [model.off]\nweights = [1.0]\nshapes = [1]\nscales = [2.0]\n\
                    [sensing]\nt_ob = 0.01\nt_re = 0.24\n\
                    [attack]\nimpulse_probability = 0.0\n\
                    [training]\nepochs = 2\n";
        let cfg = ExperimentConfig::from_toml(text, Path::new("tiny.cfg")).unwrap();
        assert_eq!(cfg.training.epochs, 2);
        assert_eq!(cfg.training.bptt_len, 50);
        assert_eq!(cfg.window, WindowConfig::default());
        assert_eq!(cfg.run, RunConfig::default());
    }

    #[test]
    fn digest_ignores_run_settings() {
        let a = ExperimentConfig::simple();
        let mut b = a.clone();
        b.run.seed = 7;
        b.run.output_dir = Some("elsewhere".into());
        assert_eq!(a.digest(), b.digest());
        b.training.epochs = 3;
        assert_ne!(a.digest(), b.digest());
    }
}
