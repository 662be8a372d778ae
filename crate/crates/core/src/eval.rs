//! Correctness metrics, the k-step and autonomous experiments, the random
//! baseline and report files.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{EncodedSequence, SequenceCodec, TokenKind};
use crate::error::{EvalError, SimError};
use crate::lstm::{fingerprint, rollout, LstmParams, RolloutOutcome, RolloutPolicy, StopCondition};
use crate::operator::{derive_seed, write_jsonl, MAX_OPERATOR_STEPS};
use crate::robot::RobotConfig;
use crate::sim::{replay, start_session, SessionLog};

pub const DEFAULT_HORIZONS: [usize; 5] = [1, 2, 3, 4, 5];
pub const DEFAULT_START_BUCKETS: [usize; 4] = [2, 4, 6, 8];
pub const DEFAULT_BASELINE_TRIALS: usize = 1000;
pub const MIN_BASELINE_TRIALS: usize = 1000;
/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// True iff `predicted` is a step token that appears in `sequence` at or
/// after position `from`.
pub fn prediction_correct_from(codec: &SequenceCodec, predicted: usize, sequence: &EncodedSequence, from: usize) -> bool {
    match codec.kind_of(predicted) {
        Ok(kind) if kind.is_step() => sequence.steps.iter().skip(from).any(|s| s.token_id == predicted),
        _ => false,
    }
}

/// True iff `predicted` is a step token that appears anywhere in `sequence`.
pub fn prediction_correct(codec: &SequenceCodec, predicted: usize, sequence: &EncodedSequence) -> bool {
    prediction_correct_from(codec, predicted, sequence, 0)
}

/// True iff replaying `log` in the simulator clears its fault.
pub fn sequence_correct(config: &Arc<RobotConfig>, log: &SessionLog) -> Result<bool, SimError> {
    Ok(replay(config.clone(), log)?.is_resolved())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KStepOptions {
    pub horizons: Vec<usize>,
    /// Steps taken from the logged sequence before generation starts.
    pub start_buckets: Vec<usize>,
    /// Score against the part of the sequence after the prefix only.
    pub suffix_only: bool,
}

impl Default for KStepOptions {
    fn default() -> Self {
        Self {
            horizons: DEFAULT_HORIZONS.to_vec(),
            start_buckets: DEFAULT_START_BUCKETS.to_vec(),
            suffix_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KStepMatrix {
    pub start_buckets: Vec<usize>,
    pub horizons: Vec<usize>,
    /// `accuracy[b][k]`; `None` where no test sequence was long enough.
    pub accuracy: Vec<Vec<Option<f64>>>,
    /// Sequences scored in each bucket.
    pub counts: Vec<usize>,
}

impl KStepMatrix {
    pub fn get(&self, bucket: usize, horizon: usize) -> Option<f64> {
        let b = self.start_buckets.iter().position(|&s| s == bucket)?;
        let k = self.horizons.iter().position(|&h| h == horizon)?;
        self.accuracy[b][k]
    }
}

/// For each test log, start length `s` and horizon `k`: replay the first `s`
/// steps, generate closed-loop, and score the `k`-th generated token.
/// A log is eligible for bucket `s` when it has more than `s` steps.
pub fn kstep_experiment(
    params: &LstmParams,
    codec: &SequenceCodec,
    config: &Arc<RobotConfig>,
    test: &[SessionLog],
    options: &KStepOptions,
) -> Result<KStepMatrix, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSplit);
    }
    if options.horizons.is_empty() || options.start_buckets.is_empty() || options.horizons.contains(&0) {
        return Err(EvalError::InvalidGrid);
    }
    let max_k = *options.horizons.iter().max().expect("non-empty");
    let policy = RolloutPolicy {
        max_steps: max_k,
        stop_condition: StopCondition::UntilStop,
    };

    // hits[b][k] per log, or None when the log is too short for bucket b.
    let per_log: Vec<Vec<Option<Vec<bool>>>> = test
        .par_iter()
        .map(|log| -> Result<_, EvalError> {
            let full = codec.encode_session(log)?;
            options
                .start_buckets
                .iter()
                .map(|&s| -> Result<Option<Vec<bool>>, EvalError> {
                    if log.steps.len() <= s {
                        return Ok(None);
                    }
                    let mut session = start_session(config.clone(), &log.fault_id, log.seed)?;
                    for step in &log.steps[..s] {
                        session.apply(step)?;
                    }
                    let prefix = codec.encode_prefix(log, s)?;
                    let out = rollout(params, codec, &mut session, &prefix.steps, policy)?;
                    let from = if options.suffix_only { codec.header_len() + s } else { 0 };
                    let hits = options
                        .horizons
                        .iter()
                        .map(|&k| {
                            out.generated
                                .get(k - 1)
                                .is_some_and(|&t| prediction_correct_from(codec, t, &full, from))
                        })
                        .collect();
                    Ok(Some(hits))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let nb = options.start_buckets.len();
    let nk = options.horizons.len();
    let mut hits = vec![vec![0usize; nk]; nb];
    let mut counts = vec![0usize; nb];
    for log in &per_log {
        for (b, cell) in log.iter().enumerate() {
            if let Some(row) = cell {
                counts[b] += 1;
                for (k, hit) in row.iter().enumerate() {
                    hits[b][k] += usize::from(*hit);
                }
            }
        }
    }
    let accuracy = (0..nb)
        .map(|b| {
            (0..nk)
                .map(|k| (counts[b] > 0).then(|| hits[b][k] as f64 / counts[b] as f64))
                .collect()
        })
        .collect();
    Ok(KStepMatrix {
        start_buckets: options.start_buckets.clone(),
        horizons: options.horizons.clone(),
        accuracy,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutonomousOutcome {
    pub fault_id: String,
    pub resolved: bool,
    /// Tokens generated before the action (or in total when none was taken).
    pub steps_taken: usize,
    /// Reads on the fault's reference path.
    pub ideal_steps: usize,
    pub outcome: RolloutOutcome,
    pub action: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutonomousResult {
    pub outcomes: Vec<AutonomousOutcome>,
    pub success_rate: f64,
}

impl AutonomousResult {
    pub fn resolved_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.resolved).count()
    }
}

/// Starts every fault from `[START, SYMPTOM]` and lets the model act until
/// its first action. Session `i` is seeded with `derive_seed(seed, i)`.
pub fn autonomous_experiment(
    params: &LstmParams,
    codec: &SequenceCodec,
    config: &Arc<RobotConfig>,
    seed: u64,
) -> Result<AutonomousResult, EvalError> {
    let policy = RolloutPolicy {
        max_steps: MAX_OPERATOR_STEPS,
        stop_condition: StopCondition::FirstAction,
    };
    let outcomes: Vec<AutonomousOutcome> = config
        .faults
        .par_iter()
        .enumerate()
        .map(|(i, fault)| -> Result<_, EvalError> {
            let mut session = start_session(config.clone(), &fault.id, derive_seed(seed, i as u64))?;
            let header = codec.encode_header(&fault.id)?;
            let out = rollout(params, codec, &mut session, &header, policy)?;
            let acted = !out.actions.is_empty();
            Ok(AutonomousOutcome {
                fault_id: fault.id.clone(),
                resolved: out.outcome == RolloutOutcome::Resolved,
                steps_taken: if acted { out.generated.len() - 1 } else { out.generated.len() },
                ideal_steps: fault.ideal_reads.len(),
                outcome: out.outcome,
                action: out.actions.first().cloned(),
            })
        })
        .collect::<Result<_, _>>()?;
    let success_rate = if outcomes.is_empty() {
        0.0
    } else {
        outcomes.iter().filter(|o| o.resolved).count() as f64 / outcomes.len() as f64
    };
    Ok(AutonomousResult { outcomes, success_rate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub mean: f64,
    pub ci95: (f64, f64),
    pub trials: usize,
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Expected first-action success of a uniformly random action choice:
/// each single-action fault succeeds with probability 1/|actions|.
pub fn closed_form_baseline(config: &RobotConfig) -> f64 {
    if config.actions.is_empty() || config.faults.is_empty() {
        return 0.0;
    }
    let single = config.faults.iter().filter(|f| f.resolution.len() == 1).count();
    single as f64 / config.faults.len() as f64 / config.actions.len() as f64
}

/// Monte Carlo success rate of a random policy under first-action stopping.
/// Each (trial, fault) pair reads uniformly random sensors, then at a
/// uniformly random step within the budget triggers a uniformly random action.
pub fn random_baseline(config: &Arc<RobotConfig>, trials: usize, seed: u64) -> Result<BaselineEstimate, EvalError> {
    if trials < MIN_BASELINE_TRIALS {
        return Err(EvalError::TooFewTrials {
            min: MIN_BASELINE_TRIALS,
            got: trials,
        });
    }
    let n_faults = config.faults.len();
    let n = trials * n_faults;
    if config.actions.is_empty() || n == 0 {
        return Ok(BaselineEstimate {
            mean: 0.0,
            ci95: wilson_interval(0, n, Z95),
            trials,
        });
    }
    let successes: usize = (0..n)
        .into_par_iter()
        .map(|idx| -> Result<usize, EvalError> {
            let fault = &config.faults[idx % n_faults];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, idx as u64));
            let mut session = start_session(config.clone(), &fault.id, rng.random())?;
            let act_at = rng.random_range(0..MAX_OPERATOR_STEPS);
            for _ in 0..act_at {
                let sensor = config.sensors.choose(&mut rng).expect("validated config has sensors");
                session.reveal_sensor(&sensor.id)?;
            }
            let action = config.actions.choose(&mut rng).expect("checked non-empty");
            session.trigger_action(&action.id)?;
            Ok(usize::from(sequence_correct(config, &session.finalize())?))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(BaselineEstimate {
        mean: successes as f64 / n as f64,
        ci95: wilson_interval(successes, n, Z95),
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kstep_accuracy: KStepMatrix,
    pub autonomous: Vec<AutonomousOutcome>,
    pub success_rate: f64,
    pub random_baseline: BaselineEstimate,
    pub dataset_fingerprint: String,
    pub model_fingerprint: String,
}

/// SHA-256 of the logs' JSONL serialization.
pub fn dataset_fingerprint(logs: &[SessionLog]) -> Result<String, EvalError> {
    let mut buf = Vec::new();
    write_jsonl(logs, &mut buf)?;
    Ok(fingerprint(&buf))
}

impl EvalReport {
    pub fn validate(&self) -> Result<(), String> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        let cells = self.kstep_accuracy.accuracy.iter().flatten().flatten();
        if !cells.copied().all(in_unit) {
            return Err("k-step accuracy outside [0, 1]".into());
        }
        let b = &self.random_baseline;
        if !in_unit(self.success_rate) || !in_unit(b.mean) || !in_unit(b.ci95.0) || !in_unit(b.ci95.1) {
            return Err("rate outside [0, 1]".into());
        }
        Ok(())
    }

    /// Flat k-step matrix: one row per (bucket, horizon); empty accuracy for
    /// absent cells.
    pub fn to_csv(&self) -> String {
        let m = &self.kstep_accuracy;
        let mut out = String::from("start_length,horizon,accuracy,sequences\n");
        for (b, bucket) in m.start_buckets.iter().enumerate() {
            for (k, horizon) in m.horizons.iter().enumerate() {
                let acc = m.accuracy[b][k].map(|v| v.to_string()).unwrap_or_default();
                out.push_str(&format!("{bucket},{horizon},{acc},{}\n", m.counts[b]));
            }
        }
        out
    }
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(report)?)?;
    fs::write(dir.join("report.csv"), report.to_csv())?;
    Ok(())
}

pub fn load_report(dir: &Path) -> Result<EvalReport, EvalError> {
    Ok(serde_json::from_slice(&fs::read(dir.join("report.json"))?)?)
}

/// True iff the token id is a READ or ACT token.
pub fn is_step_token(codec: &SequenceCodec, token_id: usize) -> bool {
    codec.kind_of(token_id).is_ok_and(TokenKind::is_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Token;
    use crate::lstm::{EmbeddingDims, ModelShape};
    use crate::sim::{ideal_session, Step};

    fn shipped() -> Arc<RobotConfig> {
        Arc::new(RobotConfig::shipped())
    }

    #[test]
    fn membership_examples() {
        let config = shipped();
        let codec = SequenceCodec::new(&config);
        let log = ideal_session(config.clone(), "driving_slow", 1).unwrap();
        let seq = codec.encode_session(&log).unwrap();
        let Step::Read { sensor_id, .. } = &log.steps[3] else {
            panic!("ideal sessions start with reads")
        };
        let read = codec.vocab().id(&Token::Read(sensor_id.clone())).unwrap();
        assert!(prediction_correct(&codec, read, &seq));
        let wrong = codec.vocab().id(&Token::Act("clean_filter".into())).unwrap();
        assert!(!prediction_correct(&codec, wrong, &seq));
        // Framing tokens are never correct predictions even though present.
        assert!(!prediction_correct(&codec, codec.vocab().start_id(), &seq));
        assert!(!prediction_correct(&codec, codec.vocab().stop_id(), &seq));
        let right = codec.vocab().id(&Token::Act("clear_wheel_debris".into())).unwrap();
        let last = seq.steps.len() - 2;
        assert!(prediction_correct_from(&codec, right, &seq, last));
        assert!(!prediction_correct_from(&codec, read, &seq, last));
    }

    #[test]
    fn sequence_correct_examples() {
        let config = shipped();
        let fault = config.fault("driving_slow").unwrap().clone();
        let mut log = ideal_session(config.clone(), &fault.id, 2).unwrap();
        assert!(sequence_correct(&config, &log).unwrap());
        log.steps.retain(Step::is_read);
        assert!(!sequence_correct(&config, &log).unwrap());
        log.fault_id = "no_such_fault".into();
        assert!(sequence_correct(&config, &log).is_err());
    }

    #[test]
    fn wilson_matches_reference_values() {
        // Reference values from statsmodels proportion_confint(30, 1000, method="wilson").
        let (lo, hi) = wilson_interval(30, 1000, Z95);
        assert!((lo - 0.021_093_738_828_834_7).abs() < 1e-12, "{lo}");
        assert!((hi - 0.042_503_414_147_587_1).abs() < 1e-12, "{hi}");
        assert_eq!(wilson_interval(0, 0, Z95), (0.0, 1.0));
    }

    #[test]
    fn closed_form_on_shipped_catalog() {
        let config = RobotConfig::shipped();
        assert!((closed_form_baseline(&config) - 14.0 / 20.0 / 26.0).abs() < 1e-15);
    }

    #[test]
    fn zero_action_config_has_zero_baseline() {
        let mut config = RobotConfig::shipped();
        config.actions.clear();
        let est = random_baseline(&Arc::new(config), 1000, 1).unwrap();
        assert_eq!(est.mean, 0.0);
        assert!(matches!(random_baseline(&shipped(), 10, 1), Err(EvalError::TooFewTrials { .. })));
    }

    #[test]
    fn oracle_policy_upper_bound() {
        // Hand-built model that maps each SYMPTOM to its fault's first
        // resolution action: the symptom embedding carries a ±1 binary code
        // of the fault index, and hidden unit f only opens its output gate
        // when the code matches f exactly.
        let config = shipped();
        let codec = SequenceCodec::new(&config);
        let mut params = LstmParams::zeros(ModelShape::for_codec(&codec, EmbeddingDims::default()));
        let code = |f: usize, bit: usize| if f >> bit & 1 == 1 { 1.0 } else { -1.0 };
        for (f, fault) in config.faults.iter().enumerate() {
            let sym = codec.vocab().id(&Token::Symptom(fault.id.clone())).unwrap();
            let act = codec.vocab().id(&Token::Act(fault.resolution[0].clone())).unwrap();
            for bit in 0..5 {
                params.token_embedding.row_mut(sym)[bit] = code(f, bit);
                params.w_candidate.row_mut(f)[bit] = 4.0 * code(f, bit);
                params.w_output.row_mut(f)[bit] = 4.0 * code(f, bit);
            }
            params.b_output.data[f] = -18.0;
            params.b_input.data[f] = 20.0;
            params.head_weight.row_mut(act)[f] = 10.0;
        }
        let result = autonomous_experiment(&params, &codec, &config, 0).unwrap();
        assert_eq!(result.outcomes.len(), 20);
        assert_eq!(result.resolved_count(), 14);
        assert!((result.success_rate - 0.7).abs() < 1e-12);
        assert!(result.outcomes.iter().all(|o| o.steps_taken == 0 && o.action.is_some()));
    }

    #[test]
    fn report_files_round_trip() {
        let matrix = KStepMatrix {
            start_buckets: vec![2, 4],
            horizons: vec![1, 2, 3],
            accuracy: vec![vec![Some(0.5), Some(0.25), None], vec![None, None, None]],
            counts: vec![4, 0],
        };
        let report = EvalReport {
            kstep_accuracy: matrix,
            autonomous: Vec::new(),
            success_rate: 0.25,
            random_baseline: BaselineEstimate {
                mean: 0.03,
                ci95: (0.02, 0.04),
                trials: 1000,
            },
            dataset_fingerprint: "d".into(),
            model_fingerprint: "m".into(),
        };
        report.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, dir.path()).unwrap();
        assert_eq!(load_report(dir.path()).unwrap(), report);
        let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
    }
}
