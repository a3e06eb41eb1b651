use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{ClassificationSpec, PartitionMode, SessionSpec};
use crate::error::{Error, Result};
use crate::federation::{DpConfig, FedAvgConfig, Participation, ProtocolKind, SelectiveSgdConfig};
use crate::models::HeadKind;

/// One experiment, fully described. Loaded from TOML; every default is
/// written back out when the config is echoed next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label used in comparison tables; defaults to the protocol name.
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    pub rounds: u64,
    /// Evaluate on the held-out split every this many rounds.
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default)]
    pub target_accuracy: Option<f64>,
    /// End the run once the smoothed test accuracy reaches the target.
    #[serde(default)]
    pub stop_at_target: bool,
    /// K, the number of simulated clients.
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub partition: PartitionMode,
    pub dataset: DatasetConfig,
    pub workload: WorkloadConfig,
    pub protocol: ProtocolConfig,
}

fn default_eval_every() -> u64 {
    5
}

fn default_clients() -> usize {
    1
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetConfig {
    Classification(ClassificationSpec),
    Sessions(SessionSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WorkloadConfig {
    /// Fully connected ReLU network; `hidden` lists the hidden layer widths.
    Mlp {
        hidden: Vec<usize>,
    },
    MultiviewGru {
        hidden: usize,
        head: HeadKind,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProtocolConfig {
    /// Plain mini-batch SGD on the pooled training set, one step per round.
    Centralized(CentralizedConfig),
    Selective(SelectiveSgdConfig),
    #[serde(rename = "fedavg")]
    FedAvg(FedAvgConfig),
    NaiveSgd(CentralizedConfig),
    #[serde(rename = "dp-fedavg")]
    DpFedAvg(DpFedAvgConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentralizedConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpFedAvgConfig {
    pub local_steps: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub sampling_probability: f64,
    pub clip_bound: f64,
    pub noise_multiplier: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Largest Rényi order tracked by the accountant.
    #[serde(default = "default_max_order")]
    pub max_order: u32,
}

fn default_delta() -> f64 {
    1e-5
}

fn default_max_order() -> u32 {
    crate::privacy::DEFAULT_MAX_ORDER
}

impl DpFedAvgConfig {
    pub fn split(&self) -> (FedAvgConfig, DpConfig) {
        (
            FedAvgConfig {
                local_steps: self.local_steps,
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                participation: Participation::All,
            },
            DpConfig {
                sampling_probability: self.sampling_probability,
                clip_bound: self.clip_bound,
                noise_multiplier: self.noise_multiplier,
                delta: self.delta,
            },
        )
    }
}

impl ProtocolConfig {
    pub fn kind(&self) -> ProtocolKind {
        match self {
            Self::Centralized(_) => ProtocolKind::Centralized,
            Self::Selective(_) => ProtocolKind::Selective,
            Self::FedAvg(_) => ProtocolKind::FedAvg,
            Self::NaiveSgd(_) => ProtocolKind::NaiveSgd,
            Self::DpFedAvg(_) => ProtocolKind::DpFedAvg,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Centralized(_) => "centralized",
            Self::Selective(_) => "selective",
            Self::FedAvg(_) => "fedavg",
            Self::NaiveSgd(_) => "naive-sgd",
            Self::DpFedAvg(_) => "dp-fedavg",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Centralized(c) | Self::NaiveSgd(c) => {
                if !(c.learning_rate >= 0.0) || !c.learning_rate.is_finite() {
                    return Err(Error::Config(format!(
                        "learning rate must be finite and >= 0, got {}",
                        c.learning_rate
                    )));
                }
                if c.batch_size == Some(0) {
                    return Err(Error::Config("batch size must be >= 1".into()));
                }
                Ok(())
            }
            Self::Selective(c) => c.validate(),
            Self::FedAvg(c) => c.validate(),
            Self::DpFedAvg(c) => {
                if c.max_order == 0 {
                    return Err(Error::Config("max_order must be >= 1".into()));
                }
                let (fed, dp) = c.split();
                fed.validate()?;
                dp.validate()
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| in_file(path, e))
    }

    /// The config with every default written out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.protocol.name().to_string())
    }

    /// Number of samples the dataset will contain.
    pub fn dataset_size(&self) -> usize {
        match &self.dataset {
            DatasetConfig::Classification(c) => c.n,
            DatasetConfig::Sessions(s) => s.users * s.sessions_per_user,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(Error::Config(msg));
        if self.eval_every == 0 {
            return cfg_err("eval_every must be >= 1".into());
        }
        if self.clients == 0 {
            return cfg_err("clients must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) || self.test_fraction == 0.0 {
            return cfg_err(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            ));
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return cfg_err(format!("target_accuracy must be in [0, 1], got {t}"));
            }
        }
        if self.stop_at_target && self.target_accuracy.is_none() {
            return cfg_err("stop_at_target needs target_accuracy".into());
        }
        if let PartitionMode::LabelShards {
            shards_per_client: 0,
        } = self.partition
        {
            return cfg_err("shards_per_client must be >= 1".into());
        }
        match (&self.dataset, &self.workload) {
            (DatasetConfig::Classification(_), WorkloadConfig::Mlp { hidden }) => {
                if hidden.contains(&0) {
                    return cfg_err("mlp hidden widths must be positive".into());
                }
            }
            (DatasetConfig::Sessions(_), WorkloadConfig::MultiviewGru { hidden, head }) => {
                let width = match *head {
                    HeadKind::Fc { hidden_units } => hidden_units,
                    HeadKind::Fm { factors } | HeadKind::Mvm { factors } => factors,
                };
                if *hidden == 0 || width == 0 {
                    return cfg_err("multiview-gru sizes must be positive".into());
                }
            }
            (DatasetConfig::Classification(_), _) => {
                return cfg_err("classification data needs the mlp workload".into())
            }
            (DatasetConfig::Sessions(_), _) => {
                return cfg_err("session data needs the multiview-gru workload".into())
            }
        }
        let n = self.dataset_size();
        let n_test = ((self.test_fraction * n as f64).round() as usize).max(1);
        if n <= n_test || n - n_test < self.clients {
            return cfg_err(format!(
                "{} training samples cannot cover {} clients",
                n.saturating_sub(n_test),
                self.clients
            ));
        }
        self.protocol.validate()
    }
}

/// Seed and dataset of a config file. Other keys are ignored, so any
/// experiment config also works as a generator config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
}

impl GeneratorConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path)?).map_err(|e| in_file(path, e))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    }
}
