//! Scripted non-expert operators, dataset filtering and stratified splits.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, SimError};
use crate::robot::RobotConfig;
use crate::sim::{action_to_read_ratio, start_session, SessionLog};

/// Hard cap on the number of steps a scripted operator may take.
pub const MAX_OPERATOR_STEPS: usize = 64;

/// Behaviour knobs of a scripted operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorProfile {
    /// Probability that a step is a read of a sensor outside the fault's subsystems.
    pub detour_rate: f64,
    /// Informative reads taken before the operator commits to acting.
    pub confidence_threshold: usize,
    /// Probability of first trying a wrong action from the same category.
    pub misfire_rate: f64,
    pub seed: u64,
}

impl Default for OperatorProfile {
    fn default() -> Self {
        Self {
            detour_rate: 0.35,
            confidence_threshold: 7,
            misfire_rate: 0.35,
            seed: 0,
        }
    }
}

impl OperatorProfile {
    /// Mostly lost operator; produces the long tail and most capped runs.
    pub fn wanderer() -> Self {
        Self {
            detour_rate: 0.85,
            confidence_threshold: 8,
            ..Self::default()
        }
    }

    /// An operator that reads exactly the reference path and acts correctly.
    pub fn expert(ideal_reads: usize, seed: u64) -> Self {
        Self {
            detour_rate: 0.0,
            confidence_threshold: ideal_reads,
            misfire_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.detour_rate) {
            return Err(format!("detour_rate {} outside [0, 1]", self.detour_rate));
        }
        if !(0.0..=1.0).contains(&self.misfire_rate) {
            return Err(format!("misfire_rate {} outside [0, 1]", self.misfire_rate));
        }
        if self.confidence_threshold == 0 {
            return Err("confidence_threshold must be >= 1".into());
        }
        Ok(())
    }
}

/// Profiles the `generate` command mixes by default, assigned round-robin
/// by session index. Calibrated so that the filtered dataset lands on the
/// target statistics (about 570 of 600 kept, mean length ~12.8, ratio ~0.153).
pub fn default_profiles() -> Vec<OperatorProfile> {
    let mut profiles = vec![OperatorProfile::default(); 29];
    profiles.push(OperatorProfile::wanderer());
    profiles
}

/// SplitMix64 finalizer; derives independent per-session seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the scripted non-expert policy against a live session.
///
/// Reads alternate between informative sensors (the fault's reference reads,
/// shuffled) and detours to sensors outside the implicated subsystems. After
/// `confidence_threshold` informative reads the operator may misfire one
/// wrong action from the same level-2 category, then applies the resolution
/// in order. Runs that hit [`MAX_OPERATOR_STEPS`] come back unresolved.
pub fn simulate_operator(
    config: &Arc<RobotConfig>,
    fault_id: &str,
    profile: &OperatorProfile,
) -> Result<SessionLog, SimError> {
    let mut session = start_session(config.clone(), fault_id, profile.seed)?;
    let fault = session.fault().clone();
    // policy draws come from a separate stream so replaying a log with its
    // seed reproduces the readings
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    rng.set_stream(1);

    let diagnostic = config.diagnostic_sensors(&fault)?;
    let detours: Vec<&str> = config
        .sensors
        .iter()
        .map(|s| s.id.as_str())
        .filter(|id| !diagnostic.contains(id))
        .collect();
    let mut informative: Vec<&str> = fault.ideal_reads.iter().map(String::as_str).collect();
    if informative.is_empty() {
        informative = fault.sensor_effects.keys().map(String::as_str).collect();
    }
    informative.shuffle(&mut rng);

    let mut informative_reads = 0;
    while informative_reads < profile.confidence_threshold {
        if session.steps().len() >= MAX_OPERATOR_STEPS {
            return Ok(session.finalize());
        }
        let detour = !detours.is_empty() && rng.random::<f64>() < profile.detour_rate;
        if detour {
            let sensor = detours.choose(&mut rng).expect("non-empty");
            session.reveal_sensor(sensor)?;
        } else {
            session.reveal_sensor(informative[informative_reads % informative.len()])?;
            informative_reads += 1;
        }
    }

    if rng.random::<f64>() < profile.misfire_rate && session.steps().len() < MAX_OPERATOR_STEPS {
        if let Some(wrong) = misfire_candidate(config, &fault.resolution, &mut rng)? {
            session.trigger_action(&wrong)?;
        }
    }
    for action_id in &fault.resolution {
        if session.steps().len() >= MAX_OPERATOR_STEPS {
            break;
        }
        session.trigger_action(action_id)?;
    }
    Ok(session.finalize())
}

/// A wrong action next to the first resolution action: same level-2
/// category if possible, otherwise same level-1 subsystem.
fn misfire_candidate(
    config: &RobotConfig,
    resolution: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<Option<String>, SimError> {
    let Some(first) = resolution.first() else {
        return Ok(None);
    };
    let first_action = config
        .action(first)
        .ok_or_else(|| SimError::UnknownAction(first.clone()))?;
    let first_path = config.taxonomy_path(&first_action.taxonomy_leaf)?;
    for depth in [2usize, 1] {
        let mut candidates = Vec::new();
        for action in &config.actions {
            if resolution.contains(&action.id) {
                continue;
            }
            let path = config.taxonomy_path(&action.taxonomy_leaf)?;
            if path.get(depth) == first_path.get(depth) {
                candidates.push(action.id.clone());
            }
        }
        if let Some(pick) = candidates.choose(rng) {
            return Ok(Some(pick.clone()));
        }
    }
    Ok(None)
}

/// Generates `sessions_per_fault` logs for every fault. Session `i` uses
/// `profiles[i % len]` with a seed derived from `master_seed` and `i`, so the
/// result is independent of scheduling.
pub fn generate_logs(
    config: &Arc<RobotConfig>,
    profiles: &[OperatorProfile],
    sessions_per_fault: usize,
    master_seed: u64,
) -> Result<Vec<SessionLog>, SimError> {
    assert!(!profiles.is_empty(), "at least one operator profile");
    let total = config.faults.len() * sessions_per_fault;
    (0..total)
        .into_par_iter()
        .map(|index| {
            let fault = &config.faults[index / sessions_per_fault];
            let profile = OperatorProfile {
                seed: derive_seed(master_seed, index as u64),
                ..profiles[index % profiles.len()].clone()
            };
            let mut log = simulate_operator(config, &fault.id, &profile)?;
            log.session_id = format!("syn-{index:05}");
            Ok(log)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<SessionLog>,
    pub removed_outliers: usize,
    pub removed_unresolved: usize,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Drops unresolved logs, then logs longer than Q3 + 1.5·IQR of the
/// remaining lengths.
pub fn filter_dataset(logs: Vec<SessionLog>) -> FilterOutcome {
    let total = logs.len();
    let resolved: Vec<SessionLog> = logs.into_iter().filter(|l| l.resolved).collect();
    let removed_unresolved = total - resolved.len();
    if resolved.is_empty() {
        return FilterOutcome {
            kept: resolved,
            removed_outliers: 0,
            removed_unresolved,
        };
    }
    let mut lengths: Vec<f64> = resolved.iter().map(|l| l.steps.len() as f64).collect();
    lengths.sort_by(f64::total_cmp);
    let q1 = quantile(&lengths, 0.25);
    let q3 = quantile(&lengths, 0.75);
    let fence = q3 + 1.5 * (q3 - q1);
    let before = resolved.len();
    let kept: Vec<SessionLog> = resolved
        .into_iter()
        .filter(|l| l.steps.len() as f64 <= fence)
        .collect();
    FilterOutcome {
        removed_outliers: before - kept.len(),
        kept,
        removed_unresolved,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub mean_length: f64,
    pub action_to_read_ratio: f64,
}

impl DatasetStats {
    pub fn compute(logs: &[SessionLog]) -> Result<Self, SimError> {
        let total: usize = logs.iter().map(|l| l.steps.len()).sum();
        Ok(Self {
            count: logs.len(),
            mean_length: if logs.is_empty() { 0.0 } else { total as f64 / logs.len() as f64 },
            action_to_read_ratio: action_to_read_ratio(logs)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub logs: Vec<SessionLog>,
    pub split_assignment: BTreeMap<String, Split>,
    pub stats: DatasetStats,
}

impl Dataset {
    /// Attaches an existing split assignment (e.g. loaded from `splits.json`).
    pub fn from_parts(logs: Vec<SessionLog>, split_assignment: BTreeMap<String, Split>) -> Result<Self, DatasetError> {
        let stats = DatasetStats::compute(&logs)?;
        Ok(Self {
            logs,
            split_assignment,
            stats,
        })
    }

    pub fn split(&self, which: Split) -> Vec<&SessionLog> {
        self.logs
            .iter()
            .filter(|l| self.split_assignment.get(&l.session_id) == Some(&which))
            .collect()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for split in self.split_assignment.values() {
            *counts.entry(*split).or_insert(0) += 1;
        }
        counts
    }
}

/// Largest-remainder apportionment of `total` across groups by size.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut shares: Vec<usize> = sizes.iter().map(|s| s * total / n).collect();
    let mut remainders: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, s)| ((s * total) % n, i))
        .collect();
    // biggest remainder first, lower group index on ties
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total - shares.iter().sum::<usize>();
    for &(_, i) in remainders.iter().take(missing) {
        shares[i] += 1;
    }
    shares
}

/// Stratified 80/10/10 split by fault. Global validation and test counts
/// are `round(n / 10)`; each fault receives its proportional share.
pub fn split_dataset(logs: Vec<SessionLog>, seed: u64) -> Result<Dataset, DatasetError> {
    if logs.len() < 10 {
        return Err(DatasetError::TooFewLogs {
            needed: 10,
            got: logs.len(),
        });
    }
    let mut seen = HashSet::new();
    for log in &logs {
        if !log.resolved {
            return Err(DatasetError::UnresolvedLog(log.session_id.clone()));
        }
        if !seen.insert(log.session_id.as_str()) {
            return Err(DatasetError::DuplicateSession(log.session_id.clone()));
        }
    }

    let mut groups: BTreeMap<&str, Vec<&SessionLog>> = BTreeMap::new();
    for log in &logs {
        groups.entry(log.fault_id.as_str()).or_default().push(log);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in groups.values_mut() {
        members.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        members.shuffle(&mut rng);
    }

    let n = logs.len();
    let tenth = (n + 5) / 10;
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let test_share = apportion(&sizes, tenth);
    let remaining: Vec<usize> = sizes.iter().zip(&test_share).map(|(s, t)| s - t).collect();
    let val_share = apportion(&remaining, tenth);

    let mut assignment = BTreeMap::new();
    for (g, members) in groups.values().enumerate() {
        for (i, log) in members.iter().enumerate() {
            let split = if i < test_share[g] {
                Split::Test
            } else if i < test_share[g] + val_share[g] {
                Split::Val
            } else {
                Split::Train
            };
            assignment.insert(log.session_id.clone(), split);
        }
    }
    Dataset::from_parts(logs, assignment)
}

pub fn write_jsonl<W: Write>(logs: &[SessionLog], mut out: W) -> Result<(), DatasetError> {
    for log in logs {
        serde_json::to_writer(&mut out, log)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<SessionLog>, DatasetError> {
    let mut logs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let log = serde_json::from_str(&line).map_err(|source| DatasetError::Json { line: i + 1, source })?;
        logs.push(log);
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{replay, Operator, Step};

    fn shipped() -> Arc<RobotConfig> {
        Arc::new(RobotConfig::shipped())
    }

    fn dummy_log(id: &str, fault: &str, len: usize, resolved: bool) -> SessionLog {
        let mut steps: Vec<Step> = (0..len.saturating_sub(1))
            .map(|_| Step::Read {
                sensor_id: "airflow".into(),
                value: 1.0,
            })
            .collect();
        if len > 0 {
            steps.push(Step::Act {
                action_id: "clean_filter".into(),
            });
        }
        SessionLog {
            session_id: id.into(),
            fault_id: fault.into(),
            steps,
            resolved,
            operator: Operator::Synthetic,
            seed: 0,
        }
    }

    #[test]
    fn expert_profile_reproduces_ideal_structure() {
        let config = shipped();
        for fault in &config.faults {
            let profile = OperatorProfile::expert(fault.ideal_reads.len(), 3);
            let log = simulate_operator(&config, &fault.id, &profile).unwrap();
            assert!(log.resolved);
            let reads: Vec<&str> = log
                .steps
                .iter()
                .filter_map(|s| match s {
                    Step::Read { sensor_id, .. } => Some(sensor_id.as_str()),
                    _ => None,
                })
                .collect();
            let mut got = reads.clone();
            let mut want: Vec<&str> = fault.ideal_reads.iter().map(String::as_str).collect();
            got.sort();
            want.sort();
            assert_eq!(got, want);
            let acts: Vec<&Step> = log.steps[reads.len()..].iter().collect();
            assert_eq!(acts.len(), fault.resolution.len());
            for (step, action) in acts.iter().zip(&fault.resolution) {
                assert_eq!(*step, &Step::Act { action_id: action.clone() });
            }
        }
    }

    #[test]
    fn full_detour_hits_cap() {
        let config = shipped();
        let profile = OperatorProfile {
            detour_rate: 1.0,
            confidence_threshold: 2,
            misfire_rate: 0.0,
            seed: 1,
        };
        let log = simulate_operator(&config, "driving_slow", &profile).unwrap();
        assert!(!log.resolved);
        assert_eq!(log.steps.len(), MAX_OPERATOR_STEPS);
    }

    #[test]
    fn generation_is_reproducible_and_replays() {
        let config = shipped();
        let a = generate_logs(&config, &default_profiles(), 3, 99).unwrap();
        let b = generate_logs(&config, &default_profiles(), 3, 99).unwrap();
        assert_eq!(a, b);
        for log in &a {
            let state = replay(config.clone(), log).unwrap();
            assert_eq!(state.is_resolved(), log.resolved);
            assert_eq!(&state.finalize().steps, &log.steps);
        }
    }

    #[test]
    fn misfire_stays_in_category() {
        let config = shipped();
        let profile = OperatorProfile {
            detour_rate: 0.0,
            confidence_threshold: 1,
            misfire_rate: 1.0,
            seed: 4,
        };
        for fault in &config.faults {
            let log = simulate_operator(&config, &fault.id, &profile).unwrap();
            let Step::Act { action_id } = &log.steps[1] else {
                panic!("expected misfire after one read")
            };
            assert!(!fault.resolution.contains(action_id));
            let subsystem = |a: &str| {
                let leaf = &config.action(a).unwrap().taxonomy_leaf;
                config.taxonomy_path(leaf).unwrap()[1].to_string()
            };
            assert_eq!(subsystem(action_id), subsystem(&fault.resolution[0]));
            assert!(log.resolved);
        }
    }

    #[test]
    fn filter_uniform_keeps_everything() {
        let logs: Vec<_> = (0..20).map(|i| dummy_log(&format!("l{i}"), "f", 12, true)).collect();
        let out = filter_dataset(logs);
        assert_eq!(out.kept.len(), 20);
        assert_eq!(out.removed_outliers, 0);
        assert_eq!(out.removed_unresolved, 0);
    }

    #[test]
    fn filter_drops_single_long_outlier_and_unresolved() {
        let mut logs: Vec<_> = (0..30)
            .map(|i| dummy_log(&format!("l{i}"), "f", 11 + i % 3, true))
            .collect();
        logs.push(dummy_log("long", "f", 200, true));
        logs.push(dummy_log("stuck", "f", 12, false));
        let out = filter_dataset(logs);
        assert_eq!(out.removed_outliers, 1);
        assert_eq!(out.removed_unresolved, 1);
        assert!(out.kept.iter().all(|l| l.session_id != "long" && l.session_id != "stuck"));
    }

    #[test]
    fn split_sizes() {
        let logs: Vec<_> = (0..570)
            .map(|i| dummy_log(&format!("l{i:03}"), &format!("f{}", i % 20), 5, true))
            .collect();
        let ds = split_dataset(logs, 1).unwrap();
        let counts = ds.split_counts();
        assert_eq!(counts[&Split::Train], 456);
        assert_eq!(counts[&Split::Val], 57);
        assert_eq!(counts[&Split::Test], 57);
        for f in 0..20 {
            let fault = format!("f{f}");
            let members: Vec<_> = ds.logs.iter().filter(|l| l.fault_id == fault).collect();
            let test = members
                .iter()
                .filter(|l| ds.split_assignment[&l.session_id] == Split::Test)
                .count();
            assert!((test as f64 - members.len() as f64 * 0.1).abs() <= 1.0);
        }

        let ten: Vec<_> = (0..10).map(|i| dummy_log(&format!("t{i}"), "only", 5, true)).collect();
        let ds = split_dataset(ten, 3).unwrap();
        let counts = ds.split_counts();
        assert_eq!((counts[&Split::Train], counts[&Split::Val], counts[&Split::Test]), (8, 1, 1));
    }

    #[test]
    fn split_determinism_and_errors() {
        let logs: Vec<_> = (0..40)
            .map(|i| dummy_log(&format!("l{i}"), &format!("f{}", i % 4), 5, true))
            .collect();
        let a = split_dataset(logs.clone(), 5).unwrap();
        let b = split_dataset(logs.clone(), 5).unwrap();
        assert_eq!(a.split_assignment, b.split_assignment);
        assert!(matches!(
            split_dataset(logs[..9].to_vec(), 5),
            Err(DatasetError::TooFewLogs { got: 9, .. })
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let config = shipped();
        let logs = generate_logs(&config, &default_profiles(), 1, 5).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&logs, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|b| **b == b'\n').count(), logs.len());
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, logs);
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(&[10, 10, 10], 3), vec![1, 1, 1]);
        assert_eq!(apportion(&[5, 5], 1), vec![1, 0]);
        assert_eq!(apportion(&[29, 28, 30], 9).iter().sum::<usize>(), 9);
    }
}
