use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tokenizer::VocabSpec;

/// Encoder architecture hyperparameters.
///
/// The backbone is a pre-norm bidirectional transformer with rotary
/// position encoding and gated feed-forward blocks. When `local_window`
/// is set, odd-indexed layers restrict attention to keys within that
/// distance of the query; even layers stay global.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub rope_base: f64,
    #[serde(default)]
    pub local_window: Option<usize>,
    /// Dropout rate inside encoder blocks. Prediction heads never use
    /// dropout.
    pub dropout: f64,
    /// Per-attribute embedding dims (bar flag, position, pitch, duration).
    pub embed_dims: [usize; 4],
    pub vocab: VocabSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 12,
            d_model: 256,
            n_heads: 8,
            ffn_dim: 512,
            rope_base: 10_000.0,
            local_window: None,
            dropout: 0.0,
            embed_dims: [16, 32, 64, 32],
            vocab: VocabSpec,
        }
    }
}

impl ModelConfig {
    /// A deliberately small config for tests and toy runs.
    pub fn tiny(n_layers: usize, d_model: usize) -> Self {
        ModelConfig {
            n_layers,
            d_model,
            n_heads: (d_model / 4).clamp(1, 4),
            ffn_dim: d_model * 2,
            embed_dims: [4, 8, 16, 8],
            ..Default::default()
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn embed_concat_dim(&self) -> usize {
        self.embed_dims.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.ffn_dim == 0 {
            return Err(CoreError::Model("all dims must be >= 1".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(CoreError::Model(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_head() % 2 != 0 {
            return Err(CoreError::Model(format!(
                "rotary encoding needs an even head dim, got {}",
                self.d_head()
            )));
        }
        if self.embed_dims.iter().any(|&d| d == 0) {
            return Err(CoreError::Model("embedding dims must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Model(format!(
                "dropout {} outside [0,1)",
                self.dropout
            )));
        }
        if self.rope_base <= 1.0 {
            return Err(CoreError::Model("rope_base must exceed 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny(2, 16).validate().unwrap();
    }

    #[test]
    fn invalid_head_split_is_rejected() {
        let cfg = ModelConfig { d_model: 10, n_heads: 3, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
