//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use toc_core::codec::{EncodeOptions, SequenceCodec};
use toc_core::error::{ConfigError, DatasetError, EvalError, ModelError};
use toc_core::eval::{closed_form_baseline, emit_report, random_baseline, KStepOptions, DEFAULT_BASELINE_TRIALS};
use toc_core::lstm::{fingerprint, Checkpoint, EmbeddingDims, TrainConfig};
use toc_core::operator::{default_profiles, read_jsonl, write_jsonl, Dataset, DatasetStats, Split};
use toc_core::pipeline::{evaluate, generate_dataset, train_model, EvalOptions, DEFAULT_SESSIONS_PER_FAULT};
use toc_core::robot::{load_robot_config, RobotConfig};
use toc_core::sim::{ideal_session, replay};

use crate::server::{router, ServiceState};

/// Failure classes mapped to process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: flags, config documents, incompatible files.
    #[error("{0}")]
    Validation(String),
    /// Anything that went wrong while doing valid work.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(format!("config: {e}"))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_)
            | ModelError::VocabularyMismatch { .. }
            | ModelError::UnsupportedVersion(_)
            | ModelError::ShapeMismatch(_)
            | ModelError::Serde(_) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::TooFewTrials { .. } | EvalError::InvalidGrid | EvalError::EmptyTestSplit => {
                CliError::Validation(e.to_string())
            }
            EvalError::Model(m) => m.into(),
            EvalError::Dataset(d) => d.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "toc", version, about = "Fault-diagnosis workbench for a simulated vacuum robot")]
pub struct Cli {
    /// Robot configuration JSON; the shipped catalog when omitted.
    #[arg(long, global = true, env = "TOC_CONFIG")]
    pub config: Option<PathBuf>,
    /// Master seed for the subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate operators and write the filtered dataset plus its splits.
    Generate(GenerateArgs),
    /// Train the next-step model.
    Train(TrainArgs),
    /// Run the k-step and autonomous experiments and the random baseline.
    Eval(EvalArgs),
    /// Estimate the random-policy success rate.
    Baseline(BaselineArgs),
    /// Replay logged sessions (or a fault's reference path) in the simulator.
    Simulate(SimulateArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = DEFAULT_SESSIONS_PER_FAULT)]
    pub sessions_per_fault: usize,
    /// Output JSONL; `splits.json` is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Split assignment; defaults to `splits.json` beside the data file.
    #[arg(long)]
    pub splits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Leave out the SYMPTOM token after START (ablation).
    #[arg(long)]
    pub no_symptom_token: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Directory for `report.json` and `report.csv`.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
    pub horizons: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 6, 8])]
    pub start_buckets: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_BASELINE_TRIALS)]
    pub trials: usize,
    /// Score k-step predictions against the remainder of the sequence only.
    #[arg(long)]
    pub suffix_only: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, default_value_t = DEFAULT_BASELINE_TRIALS)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSONL logs to replay.
    #[arg(long, conflicts_with = "fault", required_unless_present = "fault")]
    pub data: Option<PathBuf>,
    /// Print the reference session of this fault as a JSONL line.
    #[arg(long)]
    pub fault: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "TOC_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "TOC_MODEL")]
    pub model: Option<PathBuf>,
    /// JSONL file finished sessions are appended to.
    #[arg(long, env = "TOC_DATA_OUT", default_value = "human_sessions.jsonl")]
    pub data_out: PathBuf,
}

pub fn load_config(path: Option<&Path>) -> Result<Arc<RobotConfig>, CliError> {
    let config = match path {
        Some(p) => load_robot_config(&fs::read(p).map_err(|e| io_err(p, e))?)?,
        None => RobotConfig::shipped(),
    };
    Ok(Arc::new(config))
}

fn splits_path(data: &DataArgs) -> PathBuf {
    data.splits
        .clone()
        .unwrap_or_else(|| data.data.with_file_name("splits.json"))
}

pub fn load_dataset(data: &DataArgs) -> Result<Dataset, CliError> {
    let file = File::open(&data.data).map_err(|e| io_err(&data.data, e))?;
    let logs = read_jsonl(BufReader::new(file))?;
    let path = splits_path(data);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let assignment: BTreeMap<String, Split> =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if let Some(log) = logs.iter().find(|l| !assignment.contains_key(&l.session_id)) {
        return Err(CliError::Validation(format!(
            "session `{}` has no split assignment",
            log.session_id
        )));
    }
    Ok(Dataset::from_parts(logs, assignment)?)
}

fn load_checkpoint(path: &Path, config: &RobotConfig) -> Result<Checkpoint, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    // The vocabulary hash does not depend on encoding options.
    let codec = SequenceCodec::new(config);
    Ok(Checkpoint::from_bytes(&bytes, &codec)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn generate(cli: &Cli, args: &GenerateArgs) -> Result<(), CliError> {
    if args.sessions_per_fault == 0 {
        return Err(CliError::Validation("--sessions-per-fault must be at least 1".into()));
    }
    let config = load_config(cli.config.as_deref())?;
    let generated = generate_dataset(&config, &default_profiles(), args.sessions_per_fault, cli.seed)?;
    let ds = &generated.dataset;
    let file = File::create(&args.out).map_err(|e| io_err(&args.out, e))?;
    write_jsonl(&ds.logs, BufWriter::new(file))?;
    let splits = args.out.with_file_name("splits.json");
    let json = serde_json::to_vec_pretty(&ds.split_assignment).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&splits, &json)?;
    let counts = ds.split_counts();
    println!(
        "generated {} sessions: kept {}, removed {} unresolved and {} length outliers",
        generated.raw_count,
        ds.logs.len(),
        generated.removed_unresolved,
        generated.removed_outliers
    );
    println!(
        "mean length {:.2}, action-to-read ratio {:.4}",
        ds.stats.mean_length, ds.stats.action_to_read_ratio
    );
    println!(
        "splits: train {}, val {}, test {} -> {}",
        counts.get(&Split::Train).unwrap_or(&0),
        counts.get(&Split::Val).unwrap_or(&0),
        counts.get(&Split::Test).unwrap_or(&0),
        splits.display()
    );
    Ok(())
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let dataset = load_dataset(&args.data)?;
    let defaults = TrainConfig::default();
    let train_config = TrainConfig {
        learning_rate: args.learning_rate.unwrap_or(defaults.learning_rate),
        epochs: args.epochs.unwrap_or(defaults.epochs),
        batch_size: args.batch_size.unwrap_or(defaults.batch_size),
        early_stop_patience: args.patience.unwrap_or(defaults.early_stop_patience),
        seed: cli.seed,
        ..defaults
    };
    if args.hidden == 0 {
        return Err(CliError::Validation("--hidden must be at least 1".into()));
    }
    let dims = EmbeddingDims {
        hidden: args.hidden,
        ..EmbeddingDims::default()
    };
    let codec = SequenceCodec::with_options(
        &config,
        EncodeOptions {
            symptom_token: !args.no_symptom_token,
        },
    );
    let (outcome, checkpoint) = train_model(&codec, &dataset, dims, &train_config)?;
    let bytes = checkpoint.to_bytes()?;
    write_file(&args.out, &bytes)?;
    for e in &outcome.curve {
        match e.val_loss {
            Some(v) => println!("epoch {:3}  train {:.4}  val {:.4}", e.epoch, e.train_loss, v),
            None => println!("epoch {:3}  train {:.4}", e.epoch, e.train_loss),
        }
    }
    println!(
        "best epoch {}{}; wrote {} ({})",
        outcome.best_epoch,
        if outcome.stopped_early { " (early stop)" } else { "" },
        args.out.display(),
        fingerprint(&bytes)
    );
    Ok(())
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let checkpoint = load_checkpoint(&args.model, &config)?;
    let dataset = load_dataset(&args.data)?;
    let options = EvalOptions {
        kstep: KStepOptions {
            horizons: args.horizons.clone(),
            start_buckets: args.start_buckets.clone(),
            suffix_only: args.suffix_only,
        },
        baseline_trials: args.trials,
        seed: cli.seed,
    };
    let report = evaluate(&config, &checkpoint, &dataset, &options)?;
    emit_report(&report, &args.out_dir)?;
    let m = &report.kstep_accuracy;
    for (b, bucket) in m.start_buckets.iter().enumerate() {
        let cells: Vec<String> = m.accuracy[b]
            .iter()
            .map(|c| c.map(|v| format!("{v:.3}")).unwrap_or_else(|| "  -  ".into()))
            .collect();
        println!("start {bucket:2} (n={:3}): {}", m.counts[b], cells.join(" "));
    }
    let resolved = report.autonomous.iter().filter(|o| o.resolved).count();
    println!(
        "autonomous: {resolved}/{} resolved (success rate {:.3}); random baseline {:.4} [{:.4}, {:.4}]",
        report.autonomous.len(),
        report.success_rate,
        report.random_baseline.mean,
        report.random_baseline.ci95.0,
        report.random_baseline.ci95.1
    );
    println!("wrote {}", args.out_dir.join("report.json").display());
    Ok(())
}

fn baseline(cli: &Cli, args: &BaselineArgs) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let est = random_baseline(&config, args.trials, cli.seed)?;
    println!(
        "random baseline over {} trials: {:.4} [{:.4}, {:.4}] (closed form {:.4})",
        est.trials,
        est.mean,
        est.ci95.0,
        est.ci95.1,
        closed_form_baseline(&config)
    );
    Ok(())
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    if let Some(fault) = &args.fault {
        let log = ideal_session(config, fault, cli.seed).map_err(|e| CliError::Validation(e.to_string()))?;
        let mut out = Vec::new();
        write_jsonl(std::slice::from_ref(&log), &mut out)?;
        print!("{}", String::from_utf8_lossy(&out));
        return Ok(());
    }
    let path = args.data.as_ref().expect("clap enforces --data or --fault");
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let logs = read_jsonl(BufReader::new(file))?;
    let mut mismatches = 0;
    for log in &logs {
        let state = replay(config.clone(), log).map_err(|e| CliError::Validation(format!("{}: {e}", log.session_id)))?;
        let agrees = state.is_resolved() == log.resolved;
        mismatches += usize::from(!agrees);
        println!(
            "{}  {}  steps {:2}  resolved {}{}",
            log.session_id,
            log.fault_id,
            log.steps.len(),
            state.is_resolved(),
            if agrees { "" } else { "  (log disagrees)" }
        );
    }
    if logs.is_empty() {
        println!("no sessions");
    } else {
        let stats = DatasetStats::compute(&logs).map_err(|e| CliError::Validation(e.to_string()))?;
        println!(
            "{} sessions, mean length {:.2}, ratio {:.4}, {} replay mismatches",
            stats.count, stats.mean_length, stats.action_to_read_ratio, mismatches
        );
    }
    Ok(())
}

fn serve(cli: &Cli, args: &ServeArgs) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let model = args
        .model
        .as_deref()
        .map(|p| load_checkpoint(p, &config))
        .transpose()?;
    let state = Arc::new(ServiceState::new(config, model, cli.seed, args.data_out.clone()));
    let addr = SocketAddr::from(([0, 0, 0, 0], args.port));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Runtime(format!("bind {addr}: {e}")))?;
        println!("listening on http://{addr}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(a) => generate(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Baseline(a) => baseline(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Serve(a) => serve(cli, a),
    }
}
