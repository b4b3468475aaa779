//! Run configuration, read from a single JSON file.
//!
//! Every field has a default; unknown fields are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bilevel::{AdamConfig, LocalSettings};
use crate::detect::ThresholdMode;
use crate::reservoir::{Activation, ReservoirParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Batches {
    pub inner: usize,
    pub outer: usize,
}

impl Default for Batches {
    fn default() -> Self {
        Batches {
            inner: 512,
            outer: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Activations {
    /// Reservoir nonlinearity `f`.
    pub reservoir: Activation,
    /// Readout nonlinearity `h`.
    pub readout: Activation,
}

impl Default for Activations {
    fn default() -> Self {
        Activations {
            reservoir: Activation::Tanh,
            readout: Activation::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedConfig {
    /// When set, must equal the number of node directories found.
    pub n_clients: Option<usize>,
    pub rounds: usize,
    pub local_epochs: usize,
    pub sample_rate: f64,
    /// Momentum factor of the server aggregation.
    pub beta: f64,
    pub rho_target: f64,
    pub reservoir: ReservoirParams,
    /// Lifted dimension `m`.
    pub m: usize,
    pub batches: Batches,
    /// Length of outer-problem trajectories.
    pub horizon: usize,
    pub s_fraction: f64,
    pub train_fraction: f64,
    pub washout: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub std_epsilon: f64,
    pub activation: Activations,
    pub threshold: ThresholdMode,
    /// Forecast distance used for scoring.
    pub score_horizon: usize,
    pub seed: u64,
    /// Worker threads for client solves; 0 uses every core, 1 is sequential.
    pub workers: usize,
}

impl Default for FedConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        FedConfig {
            n_clients: None,
            rounds: 30,
            local_epochs: 5,
            sample_rate: 0.25,
            beta: 0.5,
            rho_target: 0.99,
            reservoir: ReservoirParams::default(),
            m: 128,
            batches: Batches::default(),
            horizon: 32,
            s_fraction: 0.5,
            train_fraction: 0.85,
            washout: 10,
            lr: adam.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            weight_decay: 1e-4,
            std_epsilon: 1e-8,
            activation: Activations::default(),
            threshold: ThresholdMode::default(),
            score_horizon: 1,
            seed: 0,
            workers: 0,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg()))
    }
}

fn open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

impl FedConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: FedConfig =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.reservoir.validate()?;
        check(self.n_clients != Some(0), || {
            "n_clients must be positive".into()
        })?;
        check(self.sample_rate > 0.0 && self.sample_rate <= 1.0, || {
            format!("sample_rate must lie in (0, 1], got {}", self.sample_rate)
        })?;
        check((0.0..=1.0).contains(&self.beta), || {
            format!("beta must lie in [0, 1], got {}", self.beta)
        })?;
        check(open_unit(self.rho_target), || {
            format!("rho_target must lie in (0, 1), got {}", self.rho_target)
        })?;
        check(self.m > 0, || "m must be positive".into())?;
        check(self.batches.inner > 0 && self.batches.outer > 0, || {
            "batch sizes must be positive".into()
        })?;
        check(self.horizon >= 2, || {
            format!("horizon must be at least 2, got {}", self.horizon)
        })?;
        check(open_unit(self.s_fraction), || {
            format!("s_fraction must lie in (0, 1), got {}", self.s_fraction)
        })?;
        check(open_unit(self.train_fraction), || {
            format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )
        })?;
        check(self.lr > 0.0 && self.lr.is_finite(), || {
            format!("lr must be positive, got {}", self.lr)
        })?;
        check(
            (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2),
            || "Adam moment factors must lie in [0, 1)".into(),
        )?;
        check(self.adam_eps > 0.0, || "adam_eps must be positive".into())?;
        check(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            || {
                format!(
                    "weight_decay must be non-negative, got {}",
                    self.weight_decay
                )
            },
        )?;
        check(self.std_epsilon > 0.0, || {
            "std_epsilon must be positive".into()
        })?;
        check(self.score_horizon >= 1, || {
            "score_horizon must be at least 1".into()
        })?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn local_settings(&self) -> LocalSettings {
        LocalSettings {
            epochs: self.local_epochs,
            inner_batch: self.batches.inner,
            outer_batch: self.batches.outer,
            weight_decay: self.weight_decay,
            rho_target: self.rho_target,
            adam: self.adam(),
        }
    }
}
