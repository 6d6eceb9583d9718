use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Temporal convolution used inside each encoder block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "vanilla-1")]
    Vanilla1,
    #[serde(rename = "vanilla-3")]
    Vanilla3,
    #[serde(rename = "dilated-3")]
    Dilated3,
}

impl KernelKind {
    pub fn kernel_size(self) -> usize {
        match self {
            KernelKind::Vanilla1 => 1,
            KernelKind::Vanilla3 | KernelKind::Dilated3 => 3,
        }
    }

    /// Dilation of block `b` (0-based). Doubles per block when dilated.
    pub fn dilation(self, block: usize) -> usize {
        match self {
            KernelKind::Dilated3 => 1 << block,
            _ => 1,
        }
    }

    /// Frames either side of `t` that can influence encoder output `t`.
    pub fn receptive_radius(self, num_blocks: usize) -> usize {
        let half = (self.kernel_size() - 1) / 2;
        (0..num_blocks).map(|b| half * self.dilation(b)).sum()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Vanilla1 => "vanilla-1",
            KernelKind::Vanilla3 => "vanilla-3",
            KernelKind::Dilated3 => "dilated-3",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "vanilla-1" => Ok(KernelKind::Vanilla1),
            "vanilla-3" => Ok(KernelKind::Vanilla3),
            "dilated-3" => Ok(KernelKind::Dilated3),
            _ => Err(ModelError::Config(format!(
                "unknown kernel kind {s:?}, expected vanilla-1, vanilla-3 or dilated-3"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    Learned,
    Sinusoidal,
}

/// How each row of the convolved similarity map is reduced to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowPool {
    /// Average over the valid columns.
    Mean,
    /// Sum over the valid columns.
    Sum,
}

impl FromStr for Positional {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "learned" => Ok(Positional::Learned),
            "sinusoidal" => Ok(Positional::Sinusoidal),
            _ => Err(ModelError::Config(format!(
                "unknown positional embedding {s:?}, expected learned or sinusoidal"
            ))),
        }
    }
}

impl FromStr for RowPool {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "mean" => Ok(RowPool::Mean),
            "sum" => Ok(RowPool::Sum),
            _ => Err(ModelError::Config(format!(
                "unknown row pooling {s:?}, expected mean or sum"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Input feature width.
    pub d0: usize,
    /// Embedding width; also the query/key width of the similarity heads.
    pub d_model: usize,
    pub num_blocks: usize,
    pub kernel_kind: KernelKind,
    /// Heads of the self-similarity matrix.
    pub heads: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub conv2d_out_channels: usize,
    /// Hidden width of the decoder feed-forward sublayer.
    pub ffn_dim: usize,
    pub dropout: f64,
    pub positional: Positional,
    /// Longest sequence the positional table covers.
    pub max_len: usize,
    pub row_pool: RowPool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d0: 768,
            d_model: 512,
            num_blocks: 6,
            kernel_kind: KernelKind::Dilated3,
            heads: 4,
            decoder_layers: 1,
            decoder_heads: 4,
            conv2d_out_channels: 32,
            ffn_dim: 2048,
            dropout: 0.0,
            positional: Positional::Learned,
            max_len: 3000,
            row_pool: RowPool::Mean,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by tests and the synthetic experiments.
    pub fn desk() -> Self {
        Self {
            d0: 32,
            d_model: 64,
            num_blocks: 3,
            ffn_dim: 128,
            max_len: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.d0 == 0 || self.d_model == 0 || self.ffn_dim == 0 {
            return fail("d0, d_model and ffn_dim must be positive".into());
        }
        if self.num_blocks == 0 {
            return fail("num_blocks must be at least 1".into());
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d_model {} must be divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.decoder_heads == 0 || !self.d_model.is_multiple_of(self.decoder_heads) {
            return fail(format!(
                "d_model {} must be divisible by decoder_heads {}",
                self.d_model, self.decoder_heads
            ));
        }
        if self.conv2d_out_channels == 0 || self.max_len == 0 {
            return fail("conv2d_out_channels and max_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn receptive_radius(&self) -> usize {
        self.kernel_kind.receptive_radius(self.num_blocks)
    }

    /// `key = value` text, one field per line.
    pub fn to_kv_text(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn from_kv_text(text: &str) -> Result<Self, ModelError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
