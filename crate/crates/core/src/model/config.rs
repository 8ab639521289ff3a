use serde::{Deserialize, Serialize};

use super::ModelError;

/// Shape hyperparameters of a GPT-2-class decoder.
///
/// Field aliases accept the key names used by Hugging Face GPT-2
/// `config.json` files, so an exported GPT-2 directory loads as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(alias = "n_vocab")]
    pub vocab_size: usize,
    #[serde(alias = "n_embd")]
    pub hidden_dim: usize,
    #[serde(alias = "n_layer")]
    pub n_layers: usize,
    #[serde(alias = "n_head")]
    pub n_heads: usize,
    #[serde(alias = "n_positions")]
    pub max_positions: usize,
    #[serde(alias = "layer_norm_epsilon", default = "default_ln_eps")]
    pub ln_eps: f64,
    /// Width of the MLP hidden layer; `None` means `4 * hidden_dim`.
    #[serde(alias = "n_inner", default)]
    pub mlp_dim: Option<usize>,
    /// When set, a checkpoint without `lm_head.weight` reuses the token
    /// embedding as the LM head.
    #[serde(alias = "tie_word_embeddings", default = "default_tie")]
    pub tie_lm_head: bool,
    #[serde(default)]
    pub eos_token_id: Option<u32>,
}

fn default_ln_eps() -> f64 {
    1e-5
}

fn default_tie() -> bool {
    true
}

impl ModelConfig {
    /// The 124M-parameter GPT-2 ("small") shape.
    pub fn gpt2_small() -> Self {
        Self {
            vocab_size: 50257,
            hidden_dim: 768,
            n_layers: 12,
            n_heads: 12,
            max_positions: 1024,
            ln_eps: 1e-5,
            mlp_dim: None,
            tie_lm_head: true,
            eos_token_id: Some(50256),
        }
    }

    pub fn tiny(vocab_size: usize, hidden_dim: usize, n_layers: usize, n_heads: usize) -> Self {
        Self {
            vocab_size,
            hidden_dim,
            n_layers,
            n_heads,
            max_positions: 128,
            ln_eps: 1e-5,
            mlp_dim: None,
            tie_lm_head: true,
            eos_token_id: None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }

    pub fn mlp_width(&self) -> usize {
        self.mlp_dim.unwrap_or(4 * self.hidden_dim)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.vocab_size == 0 {
            return fail("vocab_size must be positive".into());
        }
        if self.max_positions == 0 {
            return fail("max_positions must be positive".into());
        }
        if self.n_heads == 0 || self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return fail(format!(
                "hidden_dim {} must be a positive multiple of n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        if !(self.ln_eps >= 0.0 && self.ln_eps.is_finite()) {
            return fail(format!("ln_eps {} must be finite and nonnegative", self.ln_eps));
        }
        if let Some(eos) = self.eos_token_id {
            if eos as usize >= self.vocab_size {
                return fail(format!("eos_token_id {eos} outside vocabulary of {}", self.vocab_size));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_hf_gpt2_config() {
        let json = r#"{"activation_function":"gelu_new","n_ctx":1024,"n_embd":768,"n_head":12,
            "n_inner":null,"n_layer":12,"n_positions":1024,"layer_norm_epsilon":1e-05,
            "vocab_size":50257,"eos_token_id":50256,"model_type":"gpt2"}"#;
        let cfg: ModelConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg, ModelConfig::gpt2_small());
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut cfg = ModelConfig::tiny(10, 8, 1, 3);
        assert!(cfg.validate().is_err());
        cfg.n_heads = 2;
        cfg.validate().unwrap();
        cfg.eos_token_id = Some(10);
        assert!(cfg.validate().is_err());
    }
}
