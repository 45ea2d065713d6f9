use serde::{Deserialize, Serialize};

use super::ModelError;

/// How attention scores are turned into weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// Scores are first-differenced along the key axis (anchored on the
    /// first key) before the softmax.
    Dmhsa,
    /// Plain scaled dot-product attention.
    Mhsa,
}

impl AttentionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::Dmhsa => "dmhsa",
            AttentionKind::Mhsa => "mhsa",
        }
    }
}

impl std::str::FromStr for AttentionKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dmhsa" => Ok(AttentionKind::Dmhsa),
            "mhsa" => Ok(AttentionKind::Mhsa),
            other => Err(ModelError::Config(format!(
                "unknown attention kind {other:?} (expected dmhsa or mhsa)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Spatial edge `P` of an input patch.
    pub patch_size: usize,
    /// Spectral depth `C` after band reduction.
    pub pca_bands: usize,
    /// Edge `p` of the sub-blocks that become tokens.
    pub token_spatial: usize,
    pub d_embed: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub ln_eps: f64,
    pub attention: AttentionKind,
    pub n_classes: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Four layers of eight heads, 64-wide embeddings, a 4×64 feed-forward,
    /// dropout 0.1, layer-norm epsilon 1e-3, 12×12 patches of 15 components.
    pub fn reference(n_classes: usize) -> Self {
        Self {
            patch_size: 12,
            pca_bands: 15,
            token_spatial: 2,
            d_embed: 64,
            n_layers: 4,
            n_heads: 8,
            d_ff: 4 * 64,
            dropout_rate: 0.1,
            ln_eps: 1e-3,
            attention: AttentionKind::Dmhsa,
            n_classes,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let extents = [
            ("patch_size", self.patch_size),
            ("pca_bands", self.pca_bands),
            ("token_spatial", self.token_spatial),
            ("d_embed", self.d_embed),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("n_classes", self.n_classes),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if !self.d_embed.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "d_embed {} is not divisible by n_heads {}",
                self.d_embed, self.n_heads
            )));
        }
        if !self.d_embed.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "d_embed {} must be even for sinusoidal positions",
                self.d_embed
            )));
        }
        if !self.patch_size.is_multiple_of(self.token_spatial) {
            return Err(ModelError::Config(format!(
                "patch_size {} is not divisible by token_spatial {}",
                self.patch_size, self.token_spatial
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.ln_eps >= 0.0 && self.ln_eps.is_finite()) {
            return Err(ModelError::Config(format!("invalid ln_eps {}", self.ln_eps)));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_embed / self.n_heads
    }

    /// `(P / p)²`
    pub fn n_patch_tokens(&self) -> usize {
        let per = self.patch_size / self.token_spatial;
        per * per
    }

    /// Patch tokens plus the class token.
    pub fn n_tokens(&self) -> usize {
        self.n_patch_tokens() + 1
    }

    /// Width of one unfolded sub-block, `p·p·C`.
    pub fn token_input_dim(&self) -> usize {
        self.token_spatial * self.token_spatial * self.pca_bands
    }

    /// Closed-form count of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_embed;
        let ff = self.d_ff;
        let tokenizer = self.token_input_dim() * d + d;
        let per_layer = 4 * (d * d + d) + 2 * 2 * d + 2 * (d * ff + ff) + ff * d + d;
        let head = d * d + d;
        let classifier = d * self.n_classes + self.n_classes;
        tokenizer + d + self.n_layers * per_layer + head + classifier
    }
}
