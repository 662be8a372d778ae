//! The simulated vacuum robot: component taxonomy, sensors, actuators and
//! the fault catalog, loaded from one JSON document and validated on load.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, SimError};

/// Depth of every leaf in the taxonomy (root = 0).
pub const LEAF_LEVEL: u8 = 3;

const SHIPPED_CONFIG: &str = include_str!("../assets/vacuum_robot.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Category,
    SensorLeaf,
    ActuatorLeaf,
}

impl NodeKind {
    fn as_str(self) -> &'static str {
        match self {
            NodeKind::Category => "category",
            NodeKind::SensorLeaf => "sensor-leaf",
            NodeKind::ActuatorLeaf => "actuator-leaf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyNode {
    pub id: String,
    pub label: String,
    pub level: u8,
    pub parent_id: Option<String>,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: String,
    pub unit: String,
    pub nominal_mean: f64,
    pub noise_std: f64,
    pub min_value: f64,
    pub max_value: f64,
    pub taxonomy_leaf: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub id: String,
    pub label: String,
    pub taxonomy_leaf: String,
}

/// Distribution a fault imposes on one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorEffect {
    pub shifted_mean: f64,
    pub shifted_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub id: String,
    pub symptom_message: String,
    pub sensor_effects: BTreeMap<String, SensorEffect>,
    /// Actions that must all be applied (in any order) to clear the fault.
    pub resolution: Vec<String>,
    /// Reference diagnostic reads, in order, preceding the resolution.
    pub ideal_reads: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub schema_version: String,
    pub taxonomy: Vec<TaxonomyNode>,
    pub sensors: Vec<SensorSpec>,
    pub actions: Vec<ActionSpec>,
    pub faults: Vec<FaultSpec>,
}

/// Parses and validates a robot configuration document.
pub fn load_robot_config(document: &[u8]) -> Result<RobotConfig, ConfigError> {
    let config: RobotConfig = serde_json::from_slice(document)?;
    config.validate()?;
    Ok(config)
}

impl RobotConfig {
    /// The vacuum robot shipped with the crate (20 sensors, 26 actions, 20 faults).
    pub fn shipped() -> Self {
        load_robot_config(SHIPPED_CONFIG.as_bytes()).expect("shipped config is valid")
    }

    pub fn shipped_document() -> &'static str {
        SHIPPED_CONFIG
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn node(&self, id: &str) -> Option<&TaxonomyNode> {
        self.taxonomy.iter().find(|n| n.id == id)
    }

    pub fn sensor(&self, id: &str) -> Option<&SensorSpec> {
        self.sensors.iter().find(|s| s.id == id)
    }

    pub fn action(&self, id: &str) -> Option<&ActionSpec> {
        self.actions.iter().find(|a| a.id == id)
    }

    pub fn fault(&self, id: &str) -> Option<&FaultSpec> {
        self.faults.iter().find(|f| f.id == id)
    }

    /// Root-to-leaf node ids for a leaf (always four entries in a valid config).
    pub fn taxonomy_path(&self, leaf_id: &str) -> Result<Vec<&str>, SimError> {
        let leaf = self
            .node(leaf_id)
            .ok_or_else(|| SimError::UnknownNode(leaf_id.to_string()))?;
        if leaf.kind == NodeKind::Category {
            return Err(SimError::NotALeaf(leaf_id.to_string()));
        }
        let mut path = vec![leaf.id.as_str()];
        let mut current = leaf;
        while let Some(parent_id) = &current.parent_id {
            if path.len() > LEAF_LEVEL as usize {
                return Err(SimError::MalformedTaxonomy(leaf_id.to_string()));
            }
            current = self
                .node(parent_id)
                .ok_or_else(|| SimError::MalformedTaxonomy(parent_id.clone()))?;
            path.push(current.id.as_str());
        }
        path.reverse();
        Ok(path)
    }

    /// Level-1 subsystem a sensor belongs to.
    pub fn sensor_subsystem(&self, sensor_id: &str) -> Result<&str, SimError> {
        let sensor = self
            .sensor(sensor_id)
            .ok_or_else(|| SimError::UnknownSensor(sensor_id.to_string()))?;
        let path = self.taxonomy_path(&sensor.taxonomy_leaf)?;
        path.get(1)
            .copied()
            .ok_or_else(|| SimError::MalformedTaxonomy(sensor.taxonomy_leaf.clone()))
    }

    /// Level-2 category an action's actuator sits in.
    pub fn action_category(&self, action_id: &str) -> Result<&str, SimError> {
        let action = self
            .action(action_id)
            .ok_or_else(|| SimError::UnknownAction(action_id.to_string()))?;
        let path = self.taxonomy_path(&action.taxonomy_leaf)?;
        path.get(2)
            .copied()
            .ok_or_else(|| SimError::MalformedTaxonomy(action.taxonomy_leaf.clone()))
    }

    /// Sensors a diagnosis of `fault` may legitimately read: the affected
    /// sensors plus everything sharing a level-1 subsystem with them.
    pub fn diagnostic_sensors(&self, fault: &FaultSpec) -> Result<BTreeSet<&str>, SimError> {
        let mut subsystems = HashSet::new();
        for sensor_id in fault.sensor_effects.keys() {
            subsystems.insert(self.sensor_subsystem(sensor_id)?);
        }
        let mut out = BTreeSet::new();
        for sensor in &self.sensors {
            if subsystems.contains(self.sensor_subsystem(&sensor.id)?) {
                out.insert(sensor.id.as_str());
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_taxonomy()?;
        self.validate_sensors()?;
        self.validate_actions()?;
        self.validate_faults()
    }

    fn validate_taxonomy(&self) -> Result<(), ConfigError> {
        let mut by_id: HashMap<&str, &TaxonomyNode> = HashMap::new();
        for node in &self.taxonomy {
            if by_id.insert(node.id.as_str(), node).is_some() {
                return Err(ConfigError::DuplicateId {
                    id: node.id.clone(),
                    location: "taxonomy".into(),
                });
            }
        }
        let roots: Vec<_> = self
            .taxonomy
            .iter()
            .filter(|n| n.level == 0 && n.parent_id.is_none())
            .collect();
        if roots.len() != 1 {
            return Err(ConfigError::invalid(
                "taxonomy",
                format!("expected exactly one root, found {}", roots.len()),
            ));
        }
        for node in &self.taxonomy {
            if node.level > LEAF_LEVEL {
                return Err(ConfigError::TaxonomyLevel {
                    id: node.id.clone(),
                    reason: format!("level {} exceeds {}", node.level, LEAF_LEVEL),
                });
            }
            let is_leaf_kind = node.kind != NodeKind::Category;
            if is_leaf_kind != (node.level == LEAF_LEVEL) {
                return Err(ConfigError::TaxonomyLevel {
                    id: node.id.clone(),
                    reason: format!("kind {} at level {}", node.kind.as_str(), node.level),
                });
            }
            match (&node.parent_id, node.level) {
                (None, 0) => {}
                (None, level) => {
                    return Err(ConfigError::TaxonomyLevel {
                        id: node.id.clone(),
                        reason: format!("level {level} node has no parent"),
                    })
                }
                (Some(_), 0) => {
                    return Err(ConfigError::TaxonomyLevel {
                        id: node.id.clone(),
                        reason: "level 0 node has a parent".into(),
                    })
                }
                (Some(parent_id), level) => {
                    let parent = by_id.get(parent_id.as_str()).ok_or_else(|| {
                        ConfigError::DanglingReference {
                            id: parent_id.clone(),
                            location: format!("taxonomy node `{}` parent_id", node.id),
                        }
                    })?;
                    if parent.level + 1 != level {
                        return Err(ConfigError::TaxonomyLevel {
                            id: node.id.clone(),
                            reason: format!(
                                "parent `{}` has level {}, expected {}",
                                parent.id,
                                parent.level,
                                level - 1
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn check_leaf(&self, leaf: &str, expected: NodeKind, location: String) -> Result<(), ConfigError> {
        let node = self.node(leaf).ok_or_else(|| ConfigError::DanglingReference {
            id: leaf.to_string(),
            location: location.clone(),
        })?;
        if node.kind != expected {
            return Err(ConfigError::KindMismatch {
                id: leaf.to_string(),
                location,
                expected: expected.as_str().into(),
                found: node.kind.as_str().into(),
            });
        }
        Ok(())
    }

    fn validate_sensors(&self) -> Result<(), ConfigError> {
        let mut seen = HashSet::new();
        for sensor in &self.sensors {
            let location = format!("sensor `{}`", sensor.id);
            if !seen.insert(sensor.id.as_str()) {
                return Err(ConfigError::DuplicateId {
                    id: sensor.id.clone(),
                    location: "sensors".into(),
                });
            }
            let finite = [
                sensor.nominal_mean,
                sensor.noise_std,
                sensor.min_value,
                sensor.max_value,
            ]
            .iter()
            .all(|v| v.is_finite());
            if !finite {
                return Err(ConfigError::invalid(location, "non-finite parameter"));
            }
            if sensor.noise_std < 0.0 {
                return Err(ConfigError::invalid(location, "noise_std must be >= 0"));
            }
            if sensor.min_value >= sensor.max_value {
                return Err(ConfigError::invalid(location, "min_value must be < max_value"));
            }
            if !(sensor.min_value..=sensor.max_value).contains(&sensor.nominal_mean) {
                return Err(ConfigError::invalid(location, "nominal_mean outside [min_value, max_value]"));
            }
            self.check_leaf(&sensor.taxonomy_leaf, NodeKind::SensorLeaf, format!("{location} taxonomy_leaf"))?;
        }
        Ok(())
    }

    fn validate_actions(&self) -> Result<(), ConfigError> {
        let mut seen = HashSet::new();
        for action in &self.actions {
            if !seen.insert(action.id.as_str()) {
                return Err(ConfigError::DuplicateId {
                    id: action.id.clone(),
                    location: "actions".into(),
                });
            }
            self.check_leaf(
                &action.taxonomy_leaf,
                NodeKind::ActuatorLeaf,
                format!("action `{}` taxonomy_leaf", action.id),
            )?;
        }
        Ok(())
    }

    fn validate_faults(&self) -> Result<(), ConfigError> {
        if self.faults.is_empty() {
            return Err(ConfigError::invalid("faults", "faults must be non-empty"));
        }
        let mut seen = HashSet::new();
        for fault in &self.faults {
            let location = format!("fault `{}`", fault.id);
            if !seen.insert(fault.id.as_str()) {
                return Err(ConfigError::DuplicateId {
                    id: fault.id.clone(),
                    location: "faults".into(),
                });
            }
            if fault.sensor_effects.is_empty() {
                return Err(ConfigError::invalid(location, "sensor_effects must be non-empty"));
            }
            for (sensor_id, effect) in &fault.sensor_effects {
                if self.sensor(sensor_id).is_none() {
                    return Err(ConfigError::DanglingReference {
                        id: sensor_id.clone(),
                        location: format!("{location} sensor_effects"),
                    });
                }
                if !(effect.shifted_std >= 0.0 && effect.shifted_std.is_finite() && effect.shifted_mean.is_finite()) {
                    return Err(ConfigError::invalid(
                        format!("{location} effect on `{sensor_id}`"),
                        "shifted_mean must be finite and shifted_std >= 0",
                    ));
                }
            }
            if fault.resolution.is_empty() {
                return Err(ConfigError::invalid(location, "resolution must be non-empty"));
            }
            let mut res_seen = HashSet::new();
            for action_id in &fault.resolution {
                if self.action(action_id).is_none() {
                    return Err(ConfigError::DanglingReference {
                        id: action_id.clone(),
                        location: format!("{location} resolution"),
                    });
                }
                if !res_seen.insert(action_id.as_str()) {
                    return Err(ConfigError::DuplicateId {
                        id: action_id.clone(),
                        location: format!("{location} resolution"),
                    });
                }
            }
            for sensor_id in &fault.ideal_reads {
                if self.sensor(sensor_id).is_none() {
                    return Err(ConfigError::DanglingReference {
                        id: sensor_id.clone(),
                        location: format!("{location} ideal_reads"),
                    });
                }
            }
            let allowed = self
                .diagnostic_sensors(fault)
                .map_err(|e| ConfigError::invalid(location.clone(), e.to_string()))?;
            if let Some(stray) = fault.ideal_reads.iter().find(|s| !allowed.contains(s.as_str())) {
                return Err(ConfigError::invalid(
                    format!("{location} ideal_reads"),
                    format!("`{stray}` is neither affected by the fault nor in an affected subsystem"),
                ));
            }
        }
        Ok(())
    }
}

/// Rounds to one decimal place, the resolution sensors report at.
pub fn quantize(value: f64) -> f64 {
    (value * 10.0).round() / 10.0
}

/// Draws one noisy reading for `sensor_id`, shifted when `fault` affects it.
pub fn sample_reading<R: Rng + ?Sized>(
    config: &RobotConfig,
    fault: Option<&FaultSpec>,
    sensor_id: &str,
    rng: &mut R,
) -> Result<f64, SimError> {
    let sensor = config
        .sensor(sensor_id)
        .ok_or_else(|| SimError::UnknownSensor(sensor_id.to_string()))?;
    let (mean, std) = match fault.and_then(|f| f.sensor_effects.get(sensor_id)) {
        Some(effect) => (effect.shifted_mean, effect.shifted_std),
        None => (sensor.nominal_mean, sensor.noise_std),
    };
    let normal = Normal::new(mean, std).map_err(|_| SimError::UnknownSensor(sensor_id.to_string()))?;
    let raw = normal.sample(rng);
    Ok(quantize(raw.clamp(sensor.min_value, sensor.max_value)))
}
