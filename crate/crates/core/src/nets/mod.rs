//! Encoders, decoders and the shared latent discriminator.
//!
//! Parameters live in a flat [`ModelParams`] map keyed by dotted names
//! (`enc_v.layer1.weight`, `disc.layer3.bias`, ...). Weights are stored as
//! `[fan_in, fan_out]` so a layer is `x · W + b`.

mod checkpoint;
mod discriminator;
mod gru;
mod mlp;
mod params;

use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use discriminator::{discriminate, ENCODED_CLASS, PRIOR_CLASS};
pub use gru::{
    apply_pretrained_embeddings, gru_cell, gru_decode_nll, gru_encode, gru_encode_variational,
    GruWeights,
};
pub use mlp::{mlp_decode, mlp_encode, mlp_encode_variational};
pub use params::{init_params, param_shapes, ModelParams};

/// Which pipeline a network belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn encoder_prefix(self) -> &'static str {
        match self {
            Modality::Image => "enc_v",
            Modality::Text => "enc_t",
        }
    }

    pub fn decoder_prefix(self) -> &'static str {
        match self {
            Modality::Image => "dec_v",
            Modality::Text => "dec_t",
        }
    }
}

/// Parameters whose name starts with this prefix belong to the discriminator.
pub const DISCRIMINATOR_PREFIX: &str = "disc.";

pub fn is_discriminator_param(name: &str) -> bool {
    name.starts_with(DISCRIMINATOR_PREFIX)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GruConfig {
    pub vocab_size: usize,
    #[serde(default = "GruConfig::default_embed_dim")]
    pub embed_dim: usize,
    pub hidden_dim: usize,
    #[serde(default = "GruConfig::default_fc_dim")]
    pub encoder_fc_dim: usize,
    pub latent_dim: usize,
    #[serde(default = "GruConfig::default_word_dropout")]
    pub word_dropout_rate: f64,
    /// Stacked bidirectional encoder layers.
    #[serde(default = "GruConfig::default_layers")]
    pub num_layers: usize,
}

impl GruConfig {
    fn default_embed_dim() -> usize {
        300
    }
    fn default_fc_dim() -> usize {
        1800
    }
    fn default_word_dropout() -> f64 {
        0.2
    }
    fn default_layers() -> usize {
        1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub latent_dim: usize,
    pub layer_dims: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TextEncoderConfig {
    Features(MlpConfig),
    Gru(GruConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image: MlpConfig,
    pub text: TextEncoderConfig,
    pub discriminator: DiscriminatorConfig,
    /// Encoders also emit a log-variance head (VAE baseline).
    #[serde(default)]
    pub variational: bool,
}

impl ModelConfig {
    pub fn latent_dim(&self) -> usize {
        self.image.latent_dim
    }

    pub fn uses_gru(&self) -> bool {
        matches!(self.text, TextEncoderConfig::Gru(_))
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |msg: String| Err(NetError::InvalidConfig(msg));
        let d = self.image.latent_dim;
        let mlp_ok = |c: &MlpConfig| c.input_dim >= 1 && c.hidden_dim >= 1 && c.latent_dim >= 1;
        if !mlp_ok(&self.image) {
            return bad(format!("image encoder dims must be positive: {:?}", self.image));
        }
        let text_latent = match &self.text {
            TextEncoderConfig::Features(c) => {
                if !mlp_ok(c) {
                    return bad(format!("text encoder dims must be positive: {c:?}"));
                }
                c.latent_dim
            }
            TextEncoderConfig::Gru(c) => {
                if c.vocab_size <= crate::data::FIRST_WORD_ID as usize
                    || c.embed_dim == 0
                    || c.hidden_dim == 0
                    || c.encoder_fc_dim == 0
                    || c.num_layers == 0
                {
                    return bad(format!("GRU dims must be positive: {c:?}"));
                }
                if !(0.0..1.0).contains(&c.word_dropout_rate) {
                    return bad(format!("word dropout rate {} not in [0, 1)", c.word_dropout_rate));
                }
                c.latent_dim
            }
        };
        if text_latent != d || self.discriminator.latent_dim != d {
            return bad(format!(
                "latent dims must agree: image {d}, text {text_latent}, discriminator {}",
                self.discriminator.latent_dim
            ));
        }
        let [a, b, c] = self.discriminator.layer_dims;
        if a == 0 || b == 0 || c != 2 {
            return bad(format!(
                "discriminator layers must be positive and end in width 2, got {:?}",
                self.discriminator.layer_dims
            ));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("{what}: expected width {expected}, got {got}")]
    WidthMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("token id {id} outside vocabulary of size {vocab}")]
    OutOfVocabulary { id: u32, vocab: usize },
    #[error("dropout mask has {mask} entries for {tokens} tokens")]
    MaskLength { mask: usize, tokens: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("malformed word vectors: {0}")]
    WordVectors(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
