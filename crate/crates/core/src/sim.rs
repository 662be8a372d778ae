//! Diagnosis session state machine.
//!
//! A session injects one fault, answers sensor reveals with noisy readings,
//! applies operator actions and records every step. The fault is cleared
//! once every action of its resolution set has been applied, in any order.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::robot::{sample_reading, FaultSpec, RobotConfig};

/// One diagnostic step: a sensor reveal with its reading, or an action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Step {
    Read {
        #[serde(rename = "sensor")]
        sensor_id: String,
        value: f64,
    },
    Act {
        #[serde(rename = "action")]
        action_id: String,
    },
}

impl Step {
    pub fn is_read(&self) -> bool {
        matches!(self, Step::Read { .. })
    }

    pub fn is_act(&self) -> bool {
        matches!(self, Step::Act { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Synthetic,
    Human,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub session_id: String,
    pub fault_id: String,
    pub steps: Vec<Step>,
    pub resolved: bool,
    pub operator: Operator,
    pub seed: u64,
}

impl SessionLog {
    pub fn read_count(&self) -> usize {
        self.steps.iter().filter(|s| s.is_read()).count()
    }

    pub fn act_count(&self) -> usize {
        self.steps.iter().filter(|s| s.is_act()).count()
    }
}

/// Live, single-owner state of one diagnosis session.
#[derive(Debug, Clone)]
pub struct SessionState {
    config: Arc<RobotConfig>,
    fault_index: usize,
    session_id: String,
    operator: Operator,
    seed: u64,
    revealed: BTreeMap<String, f64>,
    applied_actions: Vec<String>,
    steps: Vec<Step>,
    resolved: bool,
    rng: ChaCha8Rng,
}

/// Opens a fresh session with `fault_id` injected; readings draw from `seed`.
pub fn start_session(config: Arc<RobotConfig>, fault_id: &str, seed: u64) -> Result<SessionState, SimError> {
    let fault_index = config
        .faults
        .iter()
        .position(|f| f.id == fault_id)
        .ok_or_else(|| SimError::UnknownFault(fault_id.to_string()))?;
    Ok(SessionState {
        session_id: format!("{fault_id}-{seed}"),
        config,
        fault_index,
        operator: Operator::Synthetic,
        seed,
        revealed: BTreeMap::new(),
        applied_actions: Vec::new(),
        steps: Vec::new(),
        resolved: false,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl SessionState {
    pub fn with_session_id(mut self, session_id: impl Into<String>) -> Self {
        self.session_id = session_id.into();
        self
    }

    pub fn with_operator(mut self, operator: Operator) -> Self {
        self.operator = operator;
        self
    }

    pub fn config(&self) -> &Arc<RobotConfig> {
        &self.config
    }

    pub fn fault(&self) -> &FaultSpec {
        &self.config.faults[self.fault_index]
    }

    pub fn symptom_message(&self) -> &str {
        &self.fault().symptom_message
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_resolved(&self) -> bool {
        self.resolved
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Latest reading of every sensor revealed so far.
    pub fn revealed(&self) -> &BTreeMap<String, f64> {
        &self.revealed
    }

    pub fn applied_actions(&self) -> &[String] {
        &self.applied_actions
    }

    /// Samples a fresh reading; repeated reveals of one sensor re-sample.
    pub fn reveal_sensor(&mut self, sensor_id: &str) -> Result<f64, SimError> {
        if self.resolved {
            return Err(SimError::AlreadyResolved);
        }
        let fault = &self.config.faults[self.fault_index];
        let value = sample_reading(&self.config, Some(fault), sensor_id, &mut self.rng)?;
        self.revealed.insert(sensor_id.to_string(), value);
        self.steps.push(Step::Read {
            sensor_id: sensor_id.to_string(),
            value,
        });
        Ok(value)
    }

    /// Applies an action and reports whether the fault is now resolved.
    /// Wrong actions are recorded and otherwise harmless.
    pub fn trigger_action(&mut self, action_id: &str) -> Result<bool, SimError> {
        if self.resolved {
            return Err(SimError::AlreadyResolved);
        }
        if self.config.action(action_id).is_none() {
            return Err(SimError::UnknownAction(action_id.to_string()));
        }
        self.applied_actions.push(action_id.to_string());
        self.steps.push(Step::Act {
            action_id: action_id.to_string(),
        });
        let fault = &self.config.faults[self.fault_index];
        self.resolved = fault
            .resolution
            .iter()
            .all(|needed| self.applied_actions.contains(needed));
        Ok(self.resolved)
    }

    /// Applies a logged step. Reads re-sample from this session's generator,
    /// so the logged value is reproduced only when seeds and order match.
    pub fn apply(&mut self, step: &Step) -> Result<(), SimError> {
        match step {
            Step::Read { sensor_id, .. } => self.reveal_sensor(sensor_id).map(|_| ()),
            Step::Act { action_id } => self.trigger_action(action_id).map(|_| ()),
        }
    }

    pub fn finalize(&self) -> SessionLog {
        SessionLog {
            session_id: self.session_id.clone(),
            fault_id: self.fault().id.clone(),
            steps: self.steps.clone(),
            resolved: self.resolved,
            operator: self.operator,
            seed: self.seed,
        }
    }
}

/// Replays a log's steps in a fresh session with the log's seed and returns
/// the final state. Steps after the fault is cleared are ignored.
pub fn replay(config: Arc<RobotConfig>, log: &SessionLog) -> Result<SessionState, SimError> {
    let mut session = start_session(config, &log.fault_id, log.seed)?;
    for step in &log.steps {
        if session.is_resolved() {
            break;
        }
        session.apply(step)?;
    }
    Ok(session)
}

/// Total actions divided by total sensor reads over a set of logs.
pub fn action_to_read_ratio(logs: &[SessionLog]) -> Result<f64, SimError> {
    let (acts, reads) = logs
        .iter()
        .fold((0usize, 0usize), |(a, r), log| (a + log.act_count(), r + log.read_count()));
    if reads == 0 {
        return Err(SimError::NoReads);
    }
    Ok(acts as f64 / reads as f64)
}

/// The designed reference session for a fault: every ideal read, then the
/// resolution actions in order.
pub fn ideal_session(config: Arc<RobotConfig>, fault_id: &str, seed: u64) -> Result<SessionLog, SimError> {
    let mut session = start_session(config, fault_id, seed)?;
    let fault = session.fault().clone();
    for sensor_id in &fault.ideal_reads {
        session.reveal_sensor(sensor_id)?;
    }
    for action_id in &fault.resolution {
        session.trigger_action(action_id)?;
    }
    Ok(session.finalize())
}
