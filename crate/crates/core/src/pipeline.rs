//! End-to-end glue: generate → split → encode → train → evaluate.
//!
//! These are the entry points used by the command-line tool; each step is
//! deterministic given its seed.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::{EncodedSequence, SequenceCodec};
use crate::error::{CodecError, DatasetError, EvalError, ModelError};
use crate::eval::{
    autonomous_experiment, dataset_fingerprint, kstep_experiment, random_baseline, EvalReport, KStepOptions,
    DEFAULT_BASELINE_TRIALS,
};
use crate::lstm::{fingerprint, train, Checkpoint, EmbeddingDims, LstmParams, ModelShape, TrainConfig, TrainOutcome};
use crate::operator::{default_profiles, filter_dataset, generate_logs, split_dataset, Dataset, OperatorProfile, Split};
use crate::robot::RobotConfig;

pub const DEFAULT_SESSIONS_PER_FAULT: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub raw_count: usize,
    pub removed_outliers: usize,
    pub removed_unresolved: usize,
    pub dataset: Dataset,
}

/// Simulates operators, filters the logs and splits the survivors, all from
/// one seed.
pub fn generate_dataset(
    config: &Arc<RobotConfig>,
    profiles: &[OperatorProfile],
    sessions_per_fault: usize,
    seed: u64,
) -> Result<GeneratedDataset, DatasetError> {
    let logs = generate_logs(config, profiles, sessions_per_fault, seed)?;
    let raw_count = logs.len();
    let filtered = filter_dataset(logs);
    let dataset = split_dataset(filtered.kept, seed)?;
    Ok(GeneratedDataset {
        raw_count,
        removed_outliers: filtered.removed_outliers,
        removed_unresolved: filtered.removed_unresolved,
        dataset,
    })
}

/// The default dataset: 30 sessions per fault with the standard operator mix.
pub fn default_dataset(config: &Arc<RobotConfig>, seed: u64) -> Result<GeneratedDataset, DatasetError> {
    generate_dataset(config, &default_profiles(), DEFAULT_SESSIONS_PER_FAULT, seed)
}

pub fn encode_split(codec: &SequenceCodec, dataset: &Dataset, which: Split) -> Result<Vec<EncodedSequence>, CodecError> {
    dataset
        .split(which)
        .into_iter()
        .map(|log| codec.encode_session(log))
        .collect()
}

/// Trains a freshly initialised model (init seed = training seed) on the
/// train split, early-stopping on the validation split.
pub fn train_model(
    codec: &SequenceCodec,
    dataset: &Dataset,
    dims: EmbeddingDims,
    train_config: &TrainConfig,
) -> Result<(TrainOutcome, Checkpoint), ModelError> {
    let train_set = encode_split(codec, dataset, Split::Train)?;
    let val_set = encode_split(codec, dataset, Split::Val)?;
    let init = LstmParams::init(ModelShape::for_codec(codec, dims), train_config.seed);
    let outcome = train(init, &train_set, &val_set, train_config)?;
    let checkpoint = Checkpoint::new(codec, train_config.clone(), outcome.params.clone());
    Ok((outcome, checkpoint))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub kstep: KStepOptions,
    pub baseline_trials: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            kstep: KStepOptions::default(),
            baseline_trials: DEFAULT_BASELINE_TRIALS,
            seed: 0,
        }
    }
}

/// Runs both experiments and the random baseline on the test split.
pub fn evaluate(
    config: &Arc<RobotConfig>,
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let codec = checkpoint.codec_for(config);
    let test: Vec<_> = dataset.split(Split::Test).into_iter().cloned().collect();
    let kstep = kstep_experiment(&checkpoint.params, &codec, config, &test, &options.kstep)?;
    let autonomous = autonomous_experiment(&checkpoint.params, &codec, config, options.seed)?;
    let baseline = random_baseline(config, options.baseline_trials, options.seed)?;
    let report = EvalReport {
        kstep_accuracy: kstep,
        autonomous: autonomous.outcomes,
        success_rate: autonomous.success_rate,
        random_baseline: baseline,
        dataset_fingerprint: dataset_fingerprint(&dataset.logs)?,
        model_fingerprint: fingerprint(&checkpoint.to_bytes()?),
    };
    Ok(report)
}
