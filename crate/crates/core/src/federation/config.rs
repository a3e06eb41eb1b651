use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStrategy {
    #[default]
    LargestMagnitude,
    Random,
}

/// Distributed selective SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectiveSgdConfig {
    /// θ_u: fraction of gradient coordinates each client uploads.
    pub upload_fraction: f64,
    /// θ_d: fraction of global parameters each client downloads.
    pub download_fraction: f64,
    #[serde(default)]
    pub strategy: SelectionStrategy,
    pub learning_rate: f64,
    /// `None` trains on the whole local shard.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl SelectiveSgdConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("upload", self.upload_fraction),
            ("download", self.download_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "{name} fraction must be in (0, 1], got {f}"
                )));
            }
        }
        check_lr(self.learning_rate)?;
        check_batch(self.batch_size)
    }
}

/// Which clients take part in a FedAvg round.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Participation {
    #[default]
    All,
    /// A fixed number of clients drawn uniformly per round.
    Count(usize),
    /// `ceil(fraction · K)` clients drawn uniformly per round.
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedAvgConfig {
    /// E: local SGD steps per round.
    pub local_steps: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub participation: Participation,
}

impl FedAvgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_steps == 0 {
            return Err(Error::Config("local_steps must be >= 1".into()));
        }
        if let Participation::Fraction(f) = self.participation {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "participation fraction must be in (0, 1], got {f}"
                )));
            }
        }
        check_lr(self.learning_rate)?;
        check_batch(self.batch_size)
    }
}

/// Privacy knobs for DP-FedAvg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    /// p: independent per-client inclusion probability.
    pub sampling_probability: f64,
    /// S: L2 bound on each client delta; `inf` disables clipping.
    pub clip_bound: f64,
    /// z: noise standard deviation in units of `S/(p·K)`.
    pub noise_multiplier: f64,
    /// δ used when reporting ε in round traces.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    1e-5
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.sampling_probability;
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Config(format!(
                "sampling probability must be in (0, 1], got {p}"
            )));
        }
        if !(self.clip_bound > 0.0) {
            return Err(Error::Config(format!(
                "clip bound must be > 0, got {}",
                self.clip_bound
            )));
        }
        let z = self.noise_multiplier;
        if !(z >= 0.0) || !z.is_finite() {
            return Err(Error::Config(format!(
                "noise multiplier must be finite and >= 0, got {z}"
            )));
        }
        if z > 0.0 && self.clip_bound.is_infinite() {
            return Err(Error::Config("noise needs a finite clip bound".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must be in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::Config(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    Ok(())
}

fn check_batch(b: Option<usize>) -> Result<()> {
    if b == Some(0) {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    Ok(())
}
