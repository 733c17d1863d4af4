//! A small post-LN transformer encoder for sequence classification.
//!
//! Attention heads and LayerNorms honour a [`DetachMode`]: the forward values
//! never change, only which factors are treated as constants in backward.

mod checkpoint;
mod forward;
mod model;

pub use checkpoint::{load, save, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

pub use forward::{
    attention_head, AttentionHead, ForwardOptions, HeadTrace, LayerTrace, NormTrace, Trace,
};
pub(crate) use forward::argmax;
pub use model::{HeadIdx, LayerIdx, NormIdx, ParamLayout, TransformerModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    #[default]
    Sinusoidal,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Positively homogeneous, so bias-free FFN blocks conserve relevance.
    #[default]
    Relu,
    Gelu,
}

/// How token states are reduced to the classifier input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    /// Classify from the first position, as with a leading `[CLS]` token.
    First,
}

fn default_eps() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Per-head key/value width; `d_model = n_heads * d_k`.
    pub d_k: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub n_classes: usize,
    #[serde(default = "default_eps")]
    pub eps_ln: f64,
    #[serde(default)]
    pub positional_encoding: PositionalEncoding,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub pooling: Pooling,
}

impl ModelConfig {
    /// Config with `d_k = d_model / n_heads`, `d_ff = 2 d_model` and 64 positions.
    pub fn new(
        vocab_size: usize,
        d_model: usize,
        n_heads: usize,
        n_layers: usize,
        n_classes: usize,
    ) -> Self {
        Self {
            vocab_size,
            d_model,
            n_heads,
            d_k: d_model / n_heads.max(1),
            n_layers,
            d_ff: 2 * d_model,
            max_seq_len: 64,
            n_classes,
            eps_ln: default_eps(),
            positional_encoding: PositionalEncoding::default(),
            activation: Activation::default(),
            pooling: Pooling::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_k", self.d_k),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
            ("n_classes", self.n_classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.n_heads * self.d_k != self.d_model {
            return Err(Error::Config(format!(
                "d_model ({}) must equal n_heads ({}) * d_k ({})",
                self.d_model, self.n_heads, self.d_k
            )));
        }
        if self.eps_ln.is_nan() || self.eps_ln <= 0.0 {
            return Err(Error::Config(format!(
                "eps_ln must be positive, got {}",
                self.eps_ln
            )));
        }
        Ok(())
    }
}

/// Which factors are frozen in backward.
///
/// `None` yields the plain gradient. `Ah` freezes the softmax gates of every
/// attention head, `Ln` freezes `sqrt(eps + Var[x])` in every LayerNorm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetachMode {
    #[default]
    None,
    Ah,
    Ln,
    AhLn,
}

impl DetachMode {
    pub fn detach_gates(self) -> bool {
        matches!(self, DetachMode::Ah | DetachMode::AhLn)
    }

    pub fn detach_norm_scale(self) -> bool {
        matches!(self, DetachMode::Ln | DetachMode::AhLn)
    }
}
