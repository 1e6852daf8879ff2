use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::Arch;
use crate::supermask::{Scope, SelectionMethod, SelectionPolicy};
use crate::trainer::optim::{LrSchedule, OptimizerConfig, OptimizerKind};

/// Longest fine-tuning run accepted.
pub const MAX_FINETUNE_EPOCHS: usize = 200;

/// Score-training configuration. Latent weights stay frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: Arch,
    pub alpha: f64,
    /// `false` skips the power-propagation map altogether (`S = s`).
    pub powerprop: bool,
    pub selection: SelectionPolicy,
    /// Replaces the threshold by the value that prunes this fraction of the
    /// initial effective scores.
    pub calibrate_theta: Option<f64>,
    /// Score initialization bound shared by all layers; `None` uses
    /// `sqrt(6 / fan_in)` per layer.
    pub score_bound: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Conv4,
            alpha: 1.0,
            powerprop: true,
            selection: SelectionPolicy::topk(0.5, Scope::Global),
            calibrate_theta: None,
            score_bound: None,
            epochs: 20,
            batch_size: 128,
            optimizer: OptimizerKind::Sgd,
            lr: 0.1,
            lr_schedule: LrSchedule::Cosine,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

fn check_common(epochs: usize, batch_size: usize, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if epochs == 0 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
    }
    if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
        return Err(Error::Config(format!("weight decay must be >= 0, got {weight_decay}")));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.epochs, self.batch_size, self.lr, self.momentum, self.weight_decay)?;
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        if !self.powerprop && self.alpha != 1.0 {
            return Err(Error::Config("bypassing power-propagation requires alpha = 1".into()));
        }
        self.selection.validate()?;
        if let Some(b) = self.score_bound {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("score bound must be positive, got {b}")));
            }
        }
        if let Some(p) = self.calibrate_theta {
            if !matches!(self.selection.method, SelectionMethod::Threshold { .. }) {
                return Err(Error::Config("theta calibration needs threshold selection".into()));
            }
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("calibration ratio must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FinetuneScope {
    FirstLayer,
    LastLayer,
    FullModel,
}

impl FinetuneScope {
    pub const ALL: [FinetuneScope; 3] = [FinetuneScope::FullModel, FinetuneScope::LastLayer, FinetuneScope::FirstLayer];

    pub fn tag(self) -> &'static str {
        match self {
            FinetuneScope::FirstLayer => "first",
            FinetuneScope::LastLayer => "last",
            FinetuneScope::FullModel => "full",
        }
    }

    /// Which of `n` prunable layers the scope trains.
    pub fn layers(self, n: usize) -> Vec<bool> {
        (0..n)
            .map(|j| match self {
                FinetuneScope::FirstLayer => j == 0,
                FinetuneScope::LastLayer => j + 1 == n,
                FinetuneScope::FullModel => true,
            })
            .collect()
    }
}

impl fmt::Display for FinetuneScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FinetuneScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" | "first_layer" => Ok(FinetuneScope::FirstLayer),
            "last" | "last_layer" => Ok(FinetuneScope::LastLayer),
            "full" | "full_model" => Ok(FinetuneScope::FullModel),
            _ => Err(Error::Config(format!("unknown scope '{s}' (first, last, full)"))),
        }
    }
}

/// Weight fine-tuning under a frozen mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub scope: FinetuneScope,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            scope: FinetuneScope::LastLayer,
            epochs: 10,
            batch_size: 256,
            optimizer: OptimizerKind::Sgd,
            lr: 0.001,
            lr_schedule: LrSchedule::Cosine,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.epochs, self.batch_size, self.lr, self.momentum, self.weight_decay)?;
        if self.epochs > MAX_FINETUNE_EPOCHS {
            return Err(Error::Config(format!(
                "{} fine-tuning epochs requested, at most {MAX_FINETUNE_EPOCHS} allowed",
                self.epochs
            )));
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}
