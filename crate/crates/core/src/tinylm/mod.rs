//! Deterministic toy decoder-only transformer.
//!
//! Pre-norm blocks (LayerNorm → multi-head causal attention → residual,
//! LayerNorm → GELU MLP → residual), learned positional embeddings, a final
//! LayerNorm and a biased unembedding. Residual-stream interventions are added
//! after each block, before the next block reads the stream.

mod forward;
mod planted;
mod sampling;
pub mod tensor;
mod vocab;
mod weights;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forward::{
    capture_last_token_activations, forward, ForwardOutput, LayerActivations, Session,
};
pub use planted::{build_planted_model, build_planted_model_with, PlantedParams};
pub use sampling::{generate, truncation_set, GenerationSample, SamplingParams};
pub use vocab::{
    Special, SpecialKind, TokenId, Vocab, BOS, BYTE_TOKENS, EOS, MIN_VOCAB, MODE_CERTAIN,
    MODE_UNCERTAIN, STANDARD_SPECIALS, STANDARD_VOCAB,
};
pub use weights::{LayerWeights, ModelWeights, PlantedDirection, WEIGHTS_FORMAT, WEIGHTS_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// The desk-scale planted configuration: 64-wide, 6 layers, 4 heads.
    pub fn planted_default(seed: u64) -> Self {
        Self {
            vocab_size: STANDARD_VOCAB,
            d_model: 64,
            n_layers: 6,
            n_heads: 4,
            context_len: 64,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.context_len == 0 {
            return Err(Error::Config(
                "all model dimensions must be positive".into(),
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Vocab::new(self.vocab_size)?;
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.vocab_size).expect("validated config")
    }
}

/// Which sequence positions an intervention touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positions {
    #[default]
    AllTokens,
    /// Only the newest position of each forward step. During generation this
    /// is the token being decoded; cached earlier positions keep their values.
    LastToken,
}

/// `h ← h + alpha · direction` at the residual stream after each listed layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub layers: Vec<usize>,
    pub direction: Vec<f32>,
    pub alpha: f32,
    pub positions: Positions,
}

impl InterventionSpec {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.direction.len() != config.d_model {
            return Err(Error::Input(format!(
                "intervention direction has length {}, expected {}",
                self.direction.len(),
                config.d_model
            )));
        }
        if let Some(&l) = self.layers.iter().find(|&&l| l >= config.n_layers) {
            return Err(Error::Input(format!(
                "intervention layer {l} out of range for {} layers",
                config.n_layers
            )));
        }
        Ok(())
    }
}
