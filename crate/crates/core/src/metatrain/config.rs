use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SplitRatios;
use crate::error::{Error, Result};
use crate::gammanet::{DEFAULT_INIT_GAMMA, DEFAULT_TAU};
use crate::smoothcal::{SoftAccuracySpec, DEFAULT_BANDWIDTH};

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Cross-entropy.
    Ce,
    /// Focal loss with one global γ.
    FocalFixed,
    /// Focal loss with γ-Net output, γ-Net trained on validation SECE.
    FlGammaSece,
    /// Focal loss with γ-Net output, γ-Net frozen at initialization.
    FlGammaNone,
}

impl Mode {
    pub fn uses_gamma_net(self) -> bool {
        matches!(self, Mode::FlGammaSece | Mode::FlGammaNone)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ce => "ce",
            Mode::FocalFixed => "focal-fixed",
            Mode::FlGammaSece => "fl-gamma-sece",
            Mode::FlGammaNone => "fl-gamma-none",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Mode::Ce),
            "focal-fixed" => Ok(Mode::FocalFixed),
            "fl-gamma-sece" => Ok(Mode::FlGammaSece),
            "fl-gamma-none" => Ok(Mode::FlGammaNone),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaTrainConfig {
    pub mode: Mode,
    /// γ for [`Mode::FocalFixed`].
    pub focal_gamma: f64,
    pub hidden: Vec<usize>,
    pub ratios: SplitRatios,
    pub batch_size: usize,
    /// Validation batch size for the outer SECE step.
    pub meta_batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fractions of `epochs` after which `lr` is multiplied by `lr_decay`.
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
    /// Adam learning rate on the γ-Net.
    pub meta_lr: f64,
    pub gamma_init: f64,
    pub tau: f64,
    pub bandwidth: f64,
    pub soft_accuracy: SoftAccuracySpec,
    /// Feed the γ-Net detached features.
    pub detach_features: bool,
    /// Drop second-order terms from the meta-gradient.
    pub first_order: bool,
    /// Bins for the per-epoch test ECE.
    pub eval_bins: usize,
    pub seed: u64,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::FlGammaSece,
            focal_gamma: 3.0,
            hidden: vec![64, 32],
            ratios: SplitRatios::default(),
            batch_size: 32,
            meta_batch_size: 32,
            epochs: 30,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_milestones: vec![0.4, 0.7],
            lr_decay: 0.1,
            meta_lr: 1e-5,
            gamma_init: DEFAULT_INIT_GAMMA,
            tau: DEFAULT_TAU,
            bandwidth: DEFAULT_BANDWIDTH,
            soft_accuracy: SoftAccuracySpec::default(),
            detach_features: true,
            first_order: false,
            eval_bins: 10,
            seed: 0,
        }
    }
}

impl MetaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("tau", self.tau),
            ("bandwidth", self.bandwidth),
            ("lr-decay", self.lr_decay),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("meta-lr", self.meta_lr),
            ("momentum", self.momentum),
            ("weight-decay", self.weight_decay),
            ("focal-gamma", self.focal_gamma),
            ("gamma-init", self.gamma_init),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.batch_size == 0 || self.meta_batch_size == 0 || self.epochs == 0 || self.eval_bins == 0 {
            return Err(Error::Config("batch sizes, epochs and eval bins must be at least 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid hidden widths {:?}", self.hidden)));
        }
        if let Some(m) = self.lr_milestones.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::Config(format!("lr milestone {m} outside [0, 1]")));
        }
        self.soft_accuracy.validate()?;
        self.ratios.validate()
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_milestones
            .iter()
            .filter(|&&m| epoch >= (m * self.epochs as f64).floor() as usize)
            .count();
        self.lr * self.lr_decay.powi(passed as i32)
    }
}
