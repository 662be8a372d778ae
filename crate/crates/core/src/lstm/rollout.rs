//! Closed-loop greedy generation against a live session.
//!
//! At each step the highest-scoring token (lowest id on ties) is taken. A
//! `READ` token asks the session for a reading, which is fed back as the
//! next input; an `ACT` token triggers the action.

use serde::{Deserialize, Serialize};

use super::model::{argmax, forward_prefix, forward_step};
use super::params::LstmParams;
use crate::codec::{EncodedStep, SequenceCodec, Token};
use crate::error::ModelError;
use crate::sim::SessionState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopCondition {
    /// End after the first action, right or wrong.
    FirstAction,
    /// Keep going until `STOP`, a non-step token, resolution or the budget.
    UntilStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutPolicy {
    pub max_steps: usize,
    pub stop_condition: StopCondition,
}

impl Default for RolloutPolicy {
    fn default() -> Self {
        Self {
            max_steps: crate::operator::MAX_OPERATOR_STEPS,
            stop_condition: StopCondition::FirstAction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutOutcome {
    Resolved,
    WrongAction,
    Stopped,
    NonStepToken,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    /// Every token the model emitted, including a final `STOP` or non-step
    /// token.
    pub generated: Vec<usize>,
    pub outcome: RolloutOutcome,
    pub reads: usize,
    pub actions: Vec<String>,
}

/// Generates from `prefix` while acting on `session`. The prefix should
/// already be reflected in the session (e.g. by replaying logged steps).
pub fn rollout(
    params: &LstmParams,
    codec: &SequenceCodec,
    session: &mut SessionState,
    prefix: &[EncodedStep],
    policy: RolloutPolicy,
) -> Result<RolloutResult, ModelError> {
    if prefix.first().map(|s| s.token_id) != Some(codec.vocab().start_id()) {
        return Err(ModelError::BadPrefix);
    }
    if params.shape.vocab != codec.vocab().len() {
        return Err(ModelError::ShapeMismatch(format!(
            "model vocabulary {} vs codec vocabulary {}",
            params.shape.vocab,
            codec.vocab().len()
        )));
    }
    let (mut logits, mut state) = forward_prefix(params, prefix)?;
    let mut result = RolloutResult {
        generated: Vec::new(),
        outcome: RolloutOutcome::BudgetExhausted,
        reads: 0,
        actions: Vec::new(),
    };
    if session.is_resolved() {
        result.outcome = RolloutOutcome::Resolved;
        return Ok(result);
    }
    for _ in 0..policy.max_steps {
        let token_id = argmax(&logits);
        result.generated.push(token_id);
        let input = match codec.decode_token(token_id)? {
            Token::Stop => {
                result.outcome = RolloutOutcome::Stopped;
                return Ok(result);
            }
            Token::Start | Token::Symptom(_) => {
                result.outcome = RolloutOutcome::NonStepToken;
                return Ok(result);
            }
            Token::Read(sensor) => {
                let value = session.reveal_sensor(sensor)?;
                result.reads += 1;
                codec.encode_token(token_id, Some(value))?
            }
            Token::Act(action) => {
                let resolved = session.trigger_action(action)?;
                result.actions.push(action.clone());
                if resolved {
                    result.outcome = RolloutOutcome::Resolved;
                    return Ok(result);
                }
                if policy.stop_condition == StopCondition::FirstAction {
                    result.outcome = RolloutOutcome::WrongAction;
                    return Ok(result);
                }
                codec.encode_token(token_id, None)?
            }
        };
        let (next_logits, next_state) = forward_step(params, &input, &state)?;
        logits = next_logits;
        state = next_state;
    }
    Ok(result)
}
