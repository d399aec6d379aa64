use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::{AutoencoderConfig, DecodeOptions};
use crate::classifier::ClassifierConfig;
use crate::dp::{NoiseFamily, PrivacySpec, SensitivityMode, DEFAULT_DELTA};
use crate::error::{Error, Result};
use crate::mia::AttackConfig;
use crate::text::{load_dataset, DataFormat, LabeledUtterance};
use crate::toy;

/// Generated corpus used instead of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyData {
    pub per_intent: usize,
    pub intents: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset file; relative paths resolve against the config file's directory.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: DataFormat,
    #[serde(default)]
    pub toy: Option<ToyData>,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_format() -> DataFormat {
    DataFormat::Jsonl
}

impl DataConfig {
    pub fn load(&self) -> Result<Vec<LabeledUtterance>> {
        match (&self.path, &self.toy) {
            (Some(p), None) => load_dataset(p, self.format),
            (None, Some(t)) => Ok(toy::intent_corpus(t.per_intent, t.intents, t.seed)),
            _ => Err(Error::Config(
                "[data] needs exactly one of `path` or `toy`".into(),
            )),
        }
    }
}

/// The noise settings to evaluate. Every family is run at every variance and
/// every epsilon listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub families: Vec<NoiseFamily>,
    pub variances: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// δ for Gaussian points; Laplace points always use δ = 0.
    pub delta: f64,
    pub sensitivity_mode: SensitivityMode,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            families: vec![NoiseFamily::Gaussian, NoiseFamily::Laplace],
            variances: vec![0.25, 0.5, 0.6, 0.75, 0.85, 1.0],
            epsilons: Vec::new(),
            delta: DEFAULT_DELTA,
            sensitivity_mode: SensitivityMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub autoencoder: AutoencoderConfig,
    #[serde(default)]
    pub decode: DecodeOptions,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a TOML config; a relative dataset path is resolved against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(p), Some(dir)) = (&cfg.data.path, path.parent()) {
            if p.is_relative() && !dir.as_os_str().is_empty() {
                cfg.data.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.path.is_some() == self.data.toy.is_some() {
            return Err(Error::Config("[data] needs exactly one of `path` or `toy`".into()));
        }
        self.decode.validate()?;
        if self.sweep.families.is_empty()
            || (self.sweep.variances.is_empty() && self.sweep.epsilons.is_empty())
        {
            return Err(Error::Config("the sweep is empty".into()));
        }
        self.specs().map(|_| ())
    }

    /// Expand the sweep into mechanism specs. All share the autoencoder's clip
    /// radius and latent dimension.
    pub fn specs(&self) -> Result<Vec<PrivacySpec>> {
        let c = self.autoencoder.arch.clip_radius;
        let d = self.autoencoder.arch.hidden_dim;
        let mode = self.sweep.sensitivity_mode;
        let mut out = Vec::new();
        for &family in &self.sweep.families {
            for &v in &self.sweep.variances {
                let spec = match family {
                    NoiseFamily::Laplace => PrivacySpec::laplace_variance(v, c, d)?,
                    NoiseFamily::Gaussian => PrivacySpec::gaussian_variance(v, self.sweep.delta, c, d)?,
                };
                out.push(spec.with_sensitivity(mode));
            }
            for &e in &self.sweep.epsilons {
                let spec = match family {
                    NoiseFamily::Laplace => PrivacySpec::laplace_epsilon(e, c, d)?,
                    NoiseFamily::Gaussian => PrivacySpec::gaussian_epsilon(e, self.sweep.delta, c, d)?,
                };
                out.push(spec.with_sensitivity(mode));
            }
        }
        Ok(out)
    }
}
