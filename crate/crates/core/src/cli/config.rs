//! Experiment configuration: a profile supplies every default, a TOML file
//! overrides any subset, and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::{load_image_folder, synth_generate, Dataset, SplitSpec, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{EvalSettings, Protocol};
use crate::trainer::{PretrainConfig, Profile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth,
    Folder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Class-per-directory image root, for `source = "folder"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    pub noise_levels: Vec<f64>,
    pub blur_levels: Vec<f64>,
    pub protocols: Vec<Protocol>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            noise_levels: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            blur_levels: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            protocols: vec![Protocol::Linear, Protocol::FineTuned],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Base seed; overrides every section's seed when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub augment: AugmentConfig,
    pub pretrain: PretrainConfig,
    pub split: SplitSpec,
    pub eval: EvalSettings,
    pub robustness: RobustnessConfig,
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let pretrain = PretrainConfig::for_profile(profile);
        let size = pretrain.encoder.input_size;
        Self {
            profile,
            seed: None,
            out_dir: PathBuf::from("runs"),
            data: DataConfig {
                source: DataSource::Synth,
                root: None,
            },
            synth: SynthConfig {
                image_size: size,
                ..SynthConfig::default()
            },
            augment: AugmentConfig {
                out_size: size,
                ..AugmentConfig::default()
            },
            pretrain,
            split: SplitSpec::default(),
            eval: EvalSettings::for_profile(profile),
            robustness: RobustnessConfig::default(),
        }
    }

    /// Resolve TOML text over the defaults of `profile` (or of the file's own
    /// `profile` key when no profile is given). Tables merge key by key,
    /// except `[split]`, which replaces the default wholesale since its
    /// fields are mutually exclusive.
    pub fn resolve(text: Option<&str>, profile: Option<Profile>) -> Result<Self> {
        let user: toml::Table = match text {
            Some(t) => t.parse().map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?,
            None => toml::Table::new(),
        };
        let file_profile = match user.get("profile") {
            Some(v) => Some(
                Profile::deserialize(v.clone()).map_err(|e| Error::config(format!("profile: {}", e.message())))?,
            ),
            None => None,
        };
        let profile = profile.or(file_profile).unwrap_or(Profile::Desk);
        let mut base = toml::Table::try_from(Self::for_profile(profile)).map_err(|e| Error::config(e.to_string()))?;
        for (k, v) in user {
            if k == "split" {
                base.insert(k, v);
            } else {
                merge(&mut base, k, v);
            }
        }
        base.insert("profile".into(), toml::Value::try_from(profile).map_err(|e| Error::config(e.to_string()))?);
        let mut cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, profile: Option<Profile>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::resolve(Some(&text), profile).map_err(|e| match e {
                    Error::Config(m) => Error::config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
            None => Self::resolve(None, profile),
        }
    }

    /// Propagate the base seed into every section.
    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.pretrain.seed = s;
            self.split.seed = s;
            self.eval.seed = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.augment.validate()?;
        self.split.validate()?;
        self.eval.validate()?;
        let size = self.pretrain.encoder.input_size;
        if self.augment.out_size != size {
            return Err(Error::config(format!(
                "augment.out_size {} must equal the encoder input_size {size}",
                self.augment.out_size
            )));
        }
        match self.data.source {
            DataSource::Synth if self.synth.image_size != size => Err(Error::config(format!(
                "synth.image_size {} must equal the encoder input_size {size}",
                self.synth.image_size
            ))),
            DataSource::Folder if self.data.root.is_none() => Err(Error::config("data.root is required for folder data")),
            _ => Ok(()),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load_data(&self) -> Result<Dataset> {
        match self.data.source {
            DataSource::Synth => synth_generate(&self.synth),
            DataSource::Folder => {
                let root = self.data.root.as_deref().ok_or_else(|| Error::config("data.root is required"))?;
                load_image_folder(root, self.pretrain.encoder.input_size)
            }
        }
    }
}

fn merge(base: &mut toml::Table, key: String, value: toml::Value) {
    match (base.get_mut(&key), value) {
        (Some(toml::Value::Table(b)), toml::Value::Table(u)) => {
            for (k, v) in u {
                merge(b, k, v);
            }
        }
        (_, v) => {
            base.insert(key, v);
        }
    }
}
