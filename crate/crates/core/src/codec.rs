//! Token vocabulary and the encoding of session logs into model inputs.
//!
//! Each step becomes one token plus two side features: the sensor value
//! normalized to `[0, 1]` (reads only) and the taxonomy category indices of
//! the entity (reads and actions). Sequences are framed as
//! `START, SYMPTOM(fault), step.., STOP`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CodecError;
use crate::robot::RobotConfig;
use crate::sim::{SessionLog, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Start,
    Stop,
    Symptom,
    Read,
    Act,
}

impl TokenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::Start => "start",
            TokenKind::Stop => "stop",
            TokenKind::Symptom => "symptom",
            TokenKind::Read => "read",
            TokenKind::Act => "act",
        }
    }

    /// Read and act tokens correspond to operator steps.
    pub fn is_step(self) -> bool {
        matches!(self, TokenKind::Read | TokenKind::Act)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Token {
    Start,
    Stop,
    Symptom(String),
    Read(String),
    Act(String),
}

impl Token {
    pub fn kind(&self) -> TokenKind {
        match self {
            Token::Start => TokenKind::Start,
            Token::Stop => TokenKind::Stop,
            Token::Symptom(_) => TokenKind::Symptom,
            Token::Read(_) => TokenKind::Read,
            Token::Act(_) => TokenKind::Act,
        }
    }

    pub fn entity(&self) -> Option<&str> {
        match self {
            Token::Start | Token::Stop => None,
            Token::Symptom(id) | Token::Read(id) | Token::Act(id) => Some(id),
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.entity() {
            Some(id) => write!(f, "{}({id})", self.kind().as_str().to_uppercase()),
            None => write!(f, "{}", self.kind().as_str().to_uppercase()),
        }
    }
}

/// Bijection between tokens and dense ids, ordered by kind then entity id.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: HashMap<Token, usize>,
}

pub fn build_vocabulary(config: &RobotConfig) -> Vocabulary {
    let sorted = |ids: Vec<&String>| {
        let mut ids: Vec<String> = ids.into_iter().cloned().collect();
        ids.sort();
        ids
    };
    let mut tokens = vec![Token::Start, Token::Stop];
    tokens.extend(sorted(config.faults.iter().map(|f| &f.id).collect()).into_iter().map(Token::Symptom));
    tokens.extend(sorted(config.sensors.iter().map(|s| &s.id).collect()).into_iter().map(Token::Read));
    tokens.extend(sorted(config.actions.iter().map(|a| &a.id).collect()).into_iter().map(Token::Act));
    let index = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
    Vocabulary { tokens, index }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn id(&self, token: &Token) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn decode_token(&self, token_id: usize) -> Result<&Token, CodecError> {
        self.tokens.get(token_id).ok_or(CodecError::OutOfRange {
            id: token_id,
            size: self.tokens.len(),
        })
    }

    pub fn start_id(&self) -> usize {
        0
    }

    pub fn stop_id(&self) -> usize {
        1
    }

    /// SHA-256 over the ordered token list; pins checkpoints to a config.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for token in &self.tokens {
            hasher.update(token.to_string().as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

/// Category indices of an entity at taxonomy levels 1, 2 and 3, each
/// counted among all nodes of that level in config order.
pub type TaxonomyIndices = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodedStep {
    pub token_id: usize,
    pub value_feature: f64,
    pub taxonomy: Option<TaxonomyIndices>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub steps: Vec<EncodedStep>,
    pub fault_id: String,
}

impl EncodedSequence {
    pub fn token_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.token_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeOptions {
    /// Emit `SYMPTOM(fault)` right after `START`.
    pub symptom_token: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self { symptom_token: true }
    }
}

#[derive(Debug, Clone)]
struct TokenInfo {
    taxonomy: Option<TaxonomyIndices>,
    // (min, max) for read tokens
    range: Option<(f64, f64)>,
}

/// Vocabulary plus the per-token lookups needed to encode steps.
#[derive(Debug, Clone)]
pub struct SequenceCodec {
    vocab: Vocabulary,
    info: Vec<TokenInfo>,
    level_sizes: [usize; 3],
    options: EncodeOptions,
}

impl SequenceCodec {
    pub fn new(config: &RobotConfig) -> Self {
        Self::with_options(config, EncodeOptions::default())
    }

    pub fn with_options(config: &RobotConfig, options: EncodeOptions) -> Self {
        let vocab = build_vocabulary(config);
        let mut level_index: HashMap<&str, usize> = HashMap::new();
        let mut level_sizes = [0usize; 3];
        for node in &config.taxonomy {
            if (1..=3).contains(&node.level) {
                let slot = &mut level_sizes[node.level as usize - 1];
                level_index.insert(node.id.as_str(), *slot);
                *slot += 1;
            }
        }
        let indices_of = |leaf: &str| -> Option<TaxonomyIndices> {
            let path = config.taxonomy_path(leaf).ok()?;
            if path.len() != 4 {
                return None;
            }
            Some([
                *level_index.get(path[1])?,
                *level_index.get(path[2])?,
                *level_index.get(path[3])?,
            ])
        };
        let info = vocab
            .tokens()
            .iter()
            .map(|token| match token {
                Token::Read(id) => {
                    let sensor = config.sensor(id).expect("vocabulary built from config");
                    TokenInfo {
                        taxonomy: indices_of(&sensor.taxonomy_leaf),
                        range: Some((sensor.min_value, sensor.max_value)),
                    }
                }
                Token::Act(id) => {
                    let action = config.action(id).expect("vocabulary built from config");
                    TokenInfo {
                        taxonomy: indices_of(&action.taxonomy_leaf),
                        range: None,
                    }
                }
                _ => TokenInfo {
                    taxonomy: None,
                    range: None,
                },
            })
            .collect();
        Self {
            vocab,
            info,
            level_sizes,
            options,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn options(&self) -> EncodeOptions {
        self.options
    }

    /// Number of taxonomy categories at levels 1, 2 and 3.
    pub fn level_sizes(&self) -> [usize; 3] {
        self.level_sizes
    }

    pub fn decode_token(&self, token_id: usize) -> Result<&Token, CodecError> {
        self.vocab.decode_token(token_id)
    }

    pub fn kind_of(&self, token_id: usize) -> Result<TokenKind, CodecError> {
        Ok(self.decode_token(token_id)?.kind())
    }

    fn token_id(&self, token: Token, kind: &'static str) -> Result<usize, CodecError> {
        let id = token.entity().unwrap_or_default().to_string();
        self.vocab.id(&token).ok_or(CodecError::UnknownId { kind, id })
    }

    /// Encodes a bare token; read tokens carry `value`, others ignore it.
    pub fn encode_token(&self, token_id: usize, value: Option<f64>) -> Result<EncodedStep, CodecError> {
        let token = self.decode_token(token_id)?;
        let info = &self.info[token_id];
        let value_feature = match (token, info.range, value) {
            (Token::Read(id), Some((min, max)), Some(v)) => {
                if max <= min {
                    return Err(CodecError::DegenerateRange(id.clone()));
                }
                ((v - min) / (max - min)).clamp(0.0, 1.0)
            }
            _ => 0.0,
        };
        Ok(EncodedStep {
            token_id,
            value_feature,
            taxonomy: info.taxonomy,
        })
    }

    pub fn encode_step(&self, step: &Step) -> Result<EncodedStep, CodecError> {
        match step {
            Step::Read { sensor_id, value } => {
                let id = self.token_id(Token::Read(sensor_id.clone()), "sensor")?;
                self.encode_token(id, Some(*value))
            }
            Step::Act { action_id } => {
                let id = self.token_id(Token::Act(action_id.clone()), "action")?;
                self.encode_token(id, None)
            }
        }
    }

    /// `START`, then `SYMPTOM(fault)` when enabled.
    pub fn encode_header(&self, fault_id: &str) -> Result<Vec<EncodedStep>, CodecError> {
        let mut steps = vec![self.encode_token(self.vocab.start_id(), None)?];
        if self.options.symptom_token {
            let id = self.token_id(Token::Symptom(fault_id.to_string()), "fault")?;
            steps.push(self.encode_token(id, None)?);
        }
        Ok(steps)
    }

    /// Number of framing tokens before the first step.
    pub fn header_len(&self) -> usize {
        if self.options.symptom_token {
            2
        } else {
            1
        }
    }

    /// Header plus the first `n_steps` steps of `log`, without `STOP`.
    pub fn encode_prefix(&self, log: &SessionLog, n_steps: usize) -> Result<EncodedSequence, CodecError> {
        let mut steps = self.encode_header(&log.fault_id)?;
        for step in log.steps.iter().take(n_steps) {
            steps.push(self.encode_step(step)?);
        }
        Ok(EncodedSequence {
            steps,
            fault_id: log.fault_id.clone(),
        })
    }

    pub fn encode_session(&self, log: &SessionLog) -> Result<EncodedSequence, CodecError> {
        let mut seq = self.encode_prefix(log, log.steps.len())?;
        seq.steps.push(self.encode_token(self.vocab.stop_id(), None)?);
        Ok(seq)
    }
}
