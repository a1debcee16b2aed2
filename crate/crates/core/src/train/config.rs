use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::Result;

/// Optimizer, schedule and data settings of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub warmup_steps: usize,
    pub decay_end_step: usize,
    pub min_lr_fraction: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub context_len: usize,
    pub total_steps: usize,
    /// Overrides the model's dropout for training steps.
    pub dropout_p: f64,
    /// Seeds the data sampler (and, derived from it, dropout masks).
    pub seed: u64,
    pub eval_interval: usize,
    pub track_interval: usize,
    /// Number of held-out windows used by each evaluation.
    pub eval_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_lr: 3e-3,
            warmup_steps: 100,
            decay_end_step: 2000,
            min_lr_fraction: 0.1,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            context_len: 64,
            total_steps: 2000,
            dropout_p: 0.0,
            seed: 0,
            eval_interval: 100,
            track_interval: 100,
            eval_windows: 16,
        }
    }
}

pub const TRAIN_PRESET_NAMES: &[&str] = &["desk", "opt-1.3b", "pythia-1.4b", "olmo-2.9b"];

impl TrainConfig {
    /// `desk` is the small CPU setup; the others carry the large-scale
    /// batch, context and peak learning rate, warmup of 25k iterations and
    /// decay end at 2.5M iterations.
    pub fn preset(name: &str) -> Option<Self> {
        let large = |batch_size, context_len, max_lr| Self {
            max_lr,
            warmup_steps: 25_000,
            decay_end_step: 2_500_000,
            batch_size,
            context_len,
            total_steps: 2_500_000,
            eval_interval: 1000,
            track_interval: 1000,
            ..Self::default()
        };
        match name {
            "desk" => Some(Self::default()),
            "opt-1.3b" | "pythia-1.4b" => Some(large(2, 1024, 1.5e-4)),
            "olmo-2.9b" => Some(large(2, 2048, 3e-4)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.warmup_steps < self.decay_end_step,
            "warmup_steps ({}) must be below decay_end_step ({})",
            self.warmup_steps,
            self.decay_end_step
        );
        ensure!(self.max_lr.is_finite() && self.max_lr >= 0.0, "max_lr must be finite and non-negative");
        ensure!((0.0..=1.0).contains(&self.min_lr_fraction), "min_lr_fraction must be in [0, 1]");
        ensure!(self.weight_decay >= 0.0, "weight_decay must be non-negative");
        ensure!((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), "betas must be in [0, 1)");
        ensure!(self.adam_eps > 0.0, "adam_eps must be positive");
        ensure!(self.batch_size >= 1 && self.context_len >= 1, "batch_size and context_len must be at least 1");
        ensure!((0.0..1.0).contains(&self.dropout_p), "dropout_p must be in [0, 1)");
        ensure!(
            self.eval_interval >= 1 && self.track_interval >= 1 && self.eval_windows >= 1,
            "intervals and eval_windows must be at least 1"
        );
        Ok(())
    }
}
