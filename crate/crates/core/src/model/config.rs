use crate::error::{Error, Result};

/// Structural constants of the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Number of parallel body-row slots.
    pub max_rows: usize,
    /// Size of the position table; bounds every position index.
    pub max_pos: usize,
    /// Size of the column table; column indices saturate at `max_cols - 1`.
    pub max_cols: usize,
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 2,
            decoder_layers: 2,
            d_model: 64,
            heads: 4,
            ffn_dim: 256,
            max_rows: 10,
            max_pos: 128,
            max_cols: 16,
            vocab_size: 512,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.max_rows < 1 {
            return fail("max_rows must be at least 1".into());
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return fail("layer counts must be positive".into());
        }
        if self.max_pos == 0 || self.max_cols == 0 || self.ffn_dim == 0 {
            return fail("max_pos, max_cols and ffn_dim must be positive".into());
        }
        if self.vocab_size <= crate::tokenizer::NUM_SPECIALS {
            return fail(format!("vocab_size {} leaves no room for content tokens", self.vocab_size));
        }
        Ok(())
    }
}
