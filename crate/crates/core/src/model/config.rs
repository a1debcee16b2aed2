use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosKind {
    /// Learned absolute position table added to the token embedding.
    Learned,
    /// Rotary embedding applied to queries and keys per head.
    Rotary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    LayerNorm,
    RmsNorm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
}

/// Architecture hyperparameters of a pre-norm decoder-only transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub pos_kind: PosKind,
    pub norm_kind: NormKind,
    pub has_bias: bool,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub dropout_p: f64,
    #[serde(default)]
    pub tied_unembedding: bool,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    /// Number of identical rotary sub-blocks per head. A head of width
    /// `d_head` rotates each of its `rope_fold` sub-blocks of width
    /// `d_head / rope_fold` with the same frequency ladder. 1 is standard
    /// rotary; head-dim expansion multiplies it.
    #[serde(default = "one")]
    pub rope_fold: usize,
    /// Constant multiplier on the logits. 1 for ordinary models; tied-embedding
    /// clones divide it by the embedding fold.
    #[serde(default = "unit")]
    pub logit_scale: f64,
}

fn default_norm_eps() -> f64 {
    1e-5
}

fn default_rope_base() -> f64 {
    10_000.0
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

/// Named architecture presets: the base/target pairs used in large-scale
/// cloning experiments plus desk-scale models for tests and training.
pub const PRESET_NAMES: &[&str] =
    &["opt-350m", "opt-1.3b", "pythia-410m", "pythia-1.4b", "olmo-1b", "olmo-2.9b", "tiny", "micro", "micro-lm"];

impl ModelConfig {
    /// Config with the common defaults: learned positions, layer norm, biases.
    pub fn new(n_layers: usize, n_heads: usize, d_model: usize, d_ffn: usize, vocab_size: usize, max_seq: usize) -> Self {
        Self {
            n_layers,
            n_heads,
            d_model,
            d_head: d_model.checked_div(n_heads).unwrap_or(0),
            d_ffn,
            vocab_size,
            max_seq,
            pos_kind: PosKind::Learned,
            norm_kind: NormKind::LayerNorm,
            has_bias: true,
            activation: Activation::Gelu,
            dropout_p: 0.0,
            tied_unembedding: false,
            norm_eps: default_norm_eps(),
            rope_base: default_rope_base(),
            rope_fold: 1,
            logit_scale: 1.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        let cfg = match name {
            "opt-350m" => Self::new(24, 16, 1024, 4096, 50272, 2048),
            "opt-1.3b" => Self::new(24, 32, 2048, 8192, 50272, 2048),
            "pythia-410m" => Self::new(24, 16, 1024, 4096, 50304, 2048).rotary(),
            "pythia-1.4b" => Self::new(24, 32, 2048, 8192, 50304, 2048).rotary(),
            "olmo-1b" => Self::new(16, 16, 2048, 16384, 50304, 2048).rotary().no_bias(),
            "olmo-2.9b" => Self::new(16, 32, 4096, 16384, 50304, 2048).rotary().no_bias(),
            "tiny" => Self::new(2, 2, 8, 16, 11, 5),
            "micro" => Self::new(2, 4, 32, 64, 256, 64),
            "micro-lm" => Self::new(2, 4, 32, 64, crate::train::Corpus::VOCAB_SIZE, 64),
            _ => return None,
        };
        Some(cfg)
    }

    pub fn rotary(mut self) -> Self {
        self.pos_kind = PosKind::Rotary;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    pub fn with_norm(mut self, norm: NormKind) -> Self {
        self.norm_kind = norm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_layers >= 1
                && self.n_heads >= 1
                && self.d_model >= 1
                && self.d_head >= 1
                && self.d_ffn >= 1
                && self.vocab_size >= 1
                && self.max_seq >= 1,
            "all model dimensions must be at least 1: {self:?}"
        );
        ensure!(
            self.d_model == self.n_heads * self.d_head,
            "d_model ({}) must equal n_heads ({}) x d_head ({})",
            self.d_model,
            self.n_heads,
            self.d_head
        );
        ensure!((0.0..1.0).contains(&self.dropout_p), "dropout_p must be in [0, 1), got {}", self.dropout_p);
        ensure!(self.norm_eps > 0.0, "norm_eps must be positive");
        ensure!(self.logit_scale.is_finite() && self.logit_scale > 0.0, "logit_scale must be positive and finite");
        if self.pos_kind == PosKind::Rotary {
            ensure!(self.rope_fold >= 1, "rope_fold must be at least 1");
            ensure!(
                self.d_head.is_multiple_of(2 * self.rope_fold),
                "rotary needs d_head ({}) divisible by 2 x rope_fold ({})",
                self.d_head,
                self.rope_fold
            );
        }
        Ok(())
    }

    /// Norms carry a shift vector β only for biased layer-norm models.
    pub fn norm_has_shift(&self) -> bool {
        self.norm_kind == NormKind::LayerNorm && self.has_bias
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        super::param_layout(self).iter().map(|p| p.rows * p.cols).sum()
    }
}

impl fmt::Display for PosKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PosKind::Learned => "learned",
            PosKind::Rotary => "rotary",
        })
    }
}

impl FromStr for PosKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "learned" | "learned-absolute" | "learned_absolute" => Ok(PosKind::Learned),
            "rotary" | "rope" => Ok(PosKind::Rotary),
            other => Err(format!("unknown position kind `{other}`")),
        }
    }
}
