use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of transformer blocks.
    pub layers: usize,
    /// Patch count including the class token at index 0.
    pub patches: usize,
    /// Embedding width.
    pub dim: usize,
    pub heads: usize,
    /// MLP hidden width.
    pub hidden_dim: usize,
    /// Pre-norm layer normalization before attention and before the MLP.
    pub use_layernorm: bool,
    /// Width of one raw input token.
    pub token_dim: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub const LAYER_NORM_EPS: f64 = 1e-5;

    /// Toy configuration used by the bundled pipelines.
    pub fn toy() -> Self {
        Self {
            layers: 4,
            patches: 17,
            dim: 16,
            heads: 2,
            hidden_dim: 32,
            use_layernorm: true,
            token_dim: 16,
            num_classes: 10,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::Config("layers must be >= 1".into()));
        }
        if self.patches < 2 {
            return Err(Error::Config(
                "patches must be >= 2 (class token plus one patch)".into(),
            ));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.hidden_dim == 0 || self.token_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config(
                "hidden_dim, token_dim and num_classes must be positive".into(),
            ));
        }
        Ok(())
    }
}
