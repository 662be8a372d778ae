//! Versioned JSON checkpoints bound to a vocabulary hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::LstmParams;
use super::train::TrainConfig;
use crate::codec::{EncodeOptions, SequenceCodec};
use crate::error::ModelError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub vocab_hash: String,
    pub encode_options: EncodeOptions,
    pub train_config: TrainConfig,
    pub params: LstmParams,
}

impl Checkpoint {
    pub fn new(codec: &SequenceCodec, train_config: TrainConfig, params: LstmParams) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            vocab_hash: codec.vocab().hash(),
            encode_options: codec.options(),
            train_config,
            params,
        }
    }

    /// Serialized form; identical parameters give identical bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        Ok(serde_json::to_vec(self)?)
    }

    /// Parses a checkpoint and checks it against the active codec.
    pub fn from_bytes(bytes: &[u8], codec: &SequenceCodec) -> Result<Self, ModelError> {
        let ckpt: Checkpoint = serde_json::from_slice(bytes)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::UnsupportedVersion(ckpt.format_version));
        }
        let expected = codec.vocab().hash();
        if ckpt.vocab_hash != expected {
            return Err(ModelError::VocabularyMismatch {
                expected,
                found: ckpt.vocab_hash,
            });
        }
        if ckpt.params.shape.vocab != codec.vocab().len() || ckpt.params.shape.taxonomy_sizes != codec.level_sizes() {
            return Err(ModelError::ShapeMismatch(
                "checkpoint shape does not match the active config".into(),
            ));
        }
        ckpt.params.check_shapes()?;
        if let Some(name) = ckpt.params.first_non_finite() {
            return Err(ModelError::NonFinite(name));
        }
        Ok(ckpt)
    }

    /// Codec matching the options the model was trained with.
    pub fn codec_for(&self, config: &crate::robot::RobotConfig) -> SequenceCodec {
        SequenceCodec::with_options(config, self.encode_options)
    }
}

/// SHA-256 hex digest of arbitrary bytes.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
