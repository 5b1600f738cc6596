use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoeConfig {
    pub n_experts: usize,
    pub k_active: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub aux_loss_weight: f64,
}

impl Default for MoeConfig {
    fn default() -> Self {
        MoeConfig::nano()
    }
}

impl MoeConfig {
    /// The trainable toy preset, "moe-nano".
    pub fn nano() -> Self {
        MoeConfig {
            n_experts: 8,
            k_active: 2,
            d_model: 128,
            d_ff: 256,
            n_layers: 4,
            n_heads: 4,
            vocab_size: 1024,
            max_seq_len: 512,
            aux_loss_weight: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_experts == 0 || self.k_active == 0 || self.k_active > self.n_experts {
            return Err(Error::Config(format!(
                "k_active must lie in [1, n_experts]; got k={} with E={}",
                self.k_active, self.n_experts
            )));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads)));
        }
        // zero layers is allowed: an embedding → logits probe
        if self.d_ff == 0 || self.vocab_size == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.aux_loss_weight.is_nan() || self.aux_loss_weight < 0.0 {
            return Err(Error::Config(format!("aux_loss_weight must be ≥ 0, got {}", self.aux_loss_weight)));
        }
        Ok(())
    }
}

/// Named model-family configurations. Only `moe-nano` is meant to be
/// instantiated here; the others document the full-size backbones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelPreset {
    MoeNano,
    TinyLlama1B,
    InternLm2_7B,
    Llama2_13B,
    Mixtral8x7B,
}

impl ModelPreset {
    pub const ALL: [ModelPreset; 5] = [
        ModelPreset::MoeNano,
        ModelPreset::TinyLlama1B,
        ModelPreset::InternLm2_7B,
        ModelPreset::Llama2_13B,
        ModelPreset::Mixtral8x7B,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelPreset::MoeNano => "moe-nano",
            ModelPreset::TinyLlama1B => "tinyllama-1.1b",
            ModelPreset::InternLm2_7B => "internlm2-7b",
            ModelPreset::Llama2_13B => "llama2-13b",
            ModelPreset::Mixtral8x7B => "mixtral-8x7b",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown model preset {name:?}")))
    }

    /// Dense backbones are expressed as a single always-active expert.
    pub fn config(self) -> MoeConfig {
        let dense = |n_layers, d_model, n_heads, d_ff, vocab_size| MoeConfig {
            n_experts: 1,
            k_active: 1,
            d_model,
            d_ff,
            n_layers,
            n_heads,
            vocab_size,
            max_seq_len: 4096,
            aux_loss_weight: 0.0,
        };
        match self {
            ModelPreset::MoeNano => MoeConfig::nano(),
            ModelPreset::TinyLlama1B => dense(22, 2048, 32, 5632, 32000),
            ModelPreset::InternLm2_7B => dense(32, 4096, 32, 14336, 92544),
            ModelPreset::Llama2_13B => dense(40, 5120, 40, 13824, 32000),
            ModelPreset::Mixtral8x7B => MoeConfig { n_experts: 8, k_active: 2, ..dense(32, 4096, 32, 14336, 32000) },
        }
    }
}
