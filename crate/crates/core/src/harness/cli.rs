//! The `trialrl` command line.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::env::EnvError;
use crate::eval::{difficulty_sweep, diversity_entropy, pass_at_k, Protocol, SweepError};
use crate::memory::MemoryMode;
use crate::policy::llm::TransportError;
use crate::policy::{ParametricPolicy, PolicyBackend};
use crate::rollout::{emit_trial, StepRecord, TrajectorySink};
use crate::trainer::{
    collect_batch, export_experience, matched_budget_pair, Checkpoint, EpochMetrics, ExportError, TrainConfig,
    TrainError, TrainMode, Trainer,
};

use super::config::{Backend, ConfigError, RunConfig};
use super::llm_http::http_policy;

pub const TRAJECTORY_SCHEMA: &str = "trialrl.trajectory/1";
pub const EXPERIENCE_SCHEMA: &str = "trialrl.experience/1";

#[derive(Debug, Parser)]
#[command(name = "trialrl", version, about = "Train and evaluate memory-conditioned agents over multi-episode trials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the parametric policy.
    Train(TrainArgs),
    /// Evaluate a frozen policy.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Roll out one update's worth of trials and write advantage-annotated records.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override the training mode from the config.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Also train single-episode RL with the same episode budget per update.
    #[arg(long)]
    pub matched_rl: bool,
    /// Log every step to trajectories.jsonl.
    #[arg(long)]
    pub trajectories: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Meta,
    Rl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Sequential,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MemoryArg {
    TrajectoryOnly,
    ReflectionOnly,
    Both,
    Disabled,
}

impl From<MemoryArg> for MemoryMode {
    fn from(m: MemoryArg) -> Self {
        match m {
            MemoryArg::TrajectoryOnly => MemoryMode::TrajectoryOnly,
            MemoryArg::ReflectionOnly => MemoryMode::ReflectionOnly,
            MemoryArg::Both => MemoryMode::Both,
            MemoryArg::Disabled => MemoryMode::Disabled,
        }
    }
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Parametric checkpoint; defaults to `<output_dir>/checkpoint.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub tasks: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// pass@k for k = 1..=K.
    Passk {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
        #[arg(long, value_enum)]
        memory: Option<MemoryArg>,
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Entropy of independently sampled trajectories.
    Diversity {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// pass@k across a difficulty axis.
    Sweep {
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        axis: Vec<usize>,
    },
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Update index whose tasks are rolled out.
    #[arg(long, default_value_t = 0)]
    pub epoch: usize,
    /// Defaults to `<output_dir>/experience.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn stdout_err(source: io::Error) -> CliError {
    CliError::Io { path: PathBuf::from("<stdout>"), source }
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn main() -> i32 {
    main_from(std::env::args_os())
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => train(args, out),
        Command::Eval(cmd) => eval(cmd, out),
        Command::Export(args) => export(args, out),
    }
}

fn prepare(config_path: &Path) -> Result<RunConfig, CliError> {
    let config = RunConfig::load(config_path)?;
    fs::create_dir_all(&config.output_dir).map_err(io_at(&config.output_dir))?;
    Ok(config)
}

fn train(args: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut config = prepare(&args.config)?;
    if config.backend != Backend::Parametric {
        return Err(CliError::Usage("only the parametric backend can be trained".into()));
    }
    match args.mode {
        Some(ModeArg::Meta) => config.train.mode = TrainMode::MetaRl,
        Some(ModeArg::Rl) => config.train.mode = TrainMode::Rl,
        None => {}
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
    }
    let started = unix_time();
    let mut runs = vec![(String::new(), config.train.clone())];
    if args.matched_rl {
        let (rl, _) = matched_budget_pair(&config.train);
        runs.push(("-rl".to_string(), rl));
    }
    let mut artifacts = Vec::new();
    for (suffix, train_config) in runs {
        let checkpoint = train_one(&config, train_config, &suffix, args.trajectories, &mut artifacts)?;
        let last = checkpoint.metrics.last();
        writeln!(
            out,
            "{} epochs={} mean_objective={:.4} success_rate={:.4}",
            if suffix.is_empty() { "trained" } else { "trained matched rl" },
            checkpoint.epoch,
            last.map_or(0.0, |m| m.mean_objective),
            last.map_or(0.0, |m| m.success_rate),
        )
        .map_err(stdout_err)?;
    }
    write_manifest(&config, "train", started, &artifacts)
}

fn train_one(
    config: &RunConfig,
    train_config: TrainConfig,
    suffix: &str,
    trajectories: bool,
    artifacts: &mut Vec<String>,
) -> Result<Checkpoint, CliError> {
    let dir = &config.output_dir;
    let mut trainer = Trainer::new(train_config, config.env, config.seed)?;
    let mut log = if trajectories {
        let path = dir.join(format!("trajectories{suffix}.jsonl"));
        artifacts.push(file_name(&path));
        Some(JsonlSink::create(&path, TRAJECTORY_SCHEMA)?)
    } else {
        None
    };
    while trainer.epoch() < trainer.config.epochs {
        match &mut log {
            Some(sink) => {
                trainer.run_epoch_observed(&mut |batch| {
                    for (id, trial) in batch.trial_ids.iter().zip(&batch.trials) {
                        emit_trial(*id, trial, sink)?;
                    }
                    Ok(())
                })?;
            }
            None => {
                trainer.run_epoch()?;
            }
        }
    }
    if let Some(sink) = log {
        sink.finish()?;
    }
    let checkpoint = trainer.checkpoint();
    let ckpt_path = dir.join(format!("checkpoint{suffix}.json"));
    checkpoint.save(&ckpt_path)?;
    let metrics_path = dir.join(format!("metrics{suffix}.csv"));
    fs::write(&metrics_path, metrics_csv(&checkpoint.metrics)).map_err(io_at(&metrics_path))?;
    artifacts.push(file_name(&ckpt_path));
    artifacts.push(file_name(&metrics_path));
    Ok(checkpoint)
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,mean_objective,success_rate,first_episode_success,mean_episodes,grad_norm,pairs\n");
    for m in metrics {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.epoch, m.mean_objective, m.success_rate, m.first_episode_success, m.mean_episodes, m.grad_norm, m.pairs
        ));
    }
    s
}

/// Runs `f` with the backend the config selects.
fn with_policy<R>(
    config: &RunConfig,
    args: &PolicyArgs,
    f: impl FnOnce(&dyn PolicyBackend) -> Result<R, CliError>,
) -> Result<R, CliError> {
    match config.backend {
        Backend::Parametric => {
            let path = args.checkpoint.clone().unwrap_or_else(|| config.output_dir.join("checkpoint.json"));
            let checkpoint = Checkpoint::load(&path).map_err(|e| match e {
                TrainError::Io(source) => CliError::Io { path: path.clone(), source },
                other => other.into(),
            })?;
            let (have, want) = (checkpoint.sampler, config.env);
            if (have.env_kind, have.board_size) != (want.env_kind, want.board_size) {
                return Err(CliError::Usage(format!(
                    "checkpoint was trained on {} {}x{} but the config asks for {} {}x{}",
                    have.env_kind, have.board_size, have.board_size, want.env_kind, want.board_size, want.board_size
                )));
            }
            let policy = ParametricPolicy::new(checkpoint.params);
            f(&policy)
        }
        Backend::Llm => {
            let policy = http_policy(&config.llm)?;
            f(&policy)
        }
    }
}

fn eval(cmd: EvalCommand, out: &mut dyn Write) -> Result<(), CliError> {
    let started = unix_time();
    match cmd {
        EvalCommand::Passk { policy, k, protocol, memory, temperature } => {
            let config = prepare(&policy.config)?;
            let mut settings = config.eval.settings();
            if let Some(k) = k {
                settings.k_max = k;
            }
            match protocol {
                Some(ProtocolArg::Sequential) => settings.protocol = Protocol::SequentialWithMemory,
                Some(ProtocolArg::Independent) => settings.protocol = Protocol::Independent,
                None => {}
            }
            if let Some(m) = memory {
                settings.memory_mode = m.into();
            }
            if let Some(t) = temperature {
                settings.temperature = t;
            }
            if settings.k_max == 0 || settings.temperature.is_nan() || settings.temperature <= 0.0 {
                return Err(CliError::Usage("k must be at least 1 and temperature positive".into()));
            }
            let tasks = config.env.eval_tasks(policy.tasks.unwrap_or(config.eval.tasks));
            let report = with_policy(&config, &policy, |p| Ok(pass_at_k(p, &tasks, &settings)?))?;
            let csv = config.output_dir.join("passk.csv");
            fs::write(&csv, report.to_csv()).map_err(io_at(&csv))?;
            let summary = config.output_dir.join("passk.json");
            write_json(&summary, &report.summary_json())?;
            for (k, r) in report.k.iter().zip(&report.rates) {
                writeln!(out, "pass@{k} = {r:.4}").map_err(stdout_err)?;
            }
            write_manifest(&config, "eval passk", started, &["passk.csv".into(), "passk.json".into()])
        }
        EvalCommand::Diversity { policy, samples } => {
            let config = prepare(&policy.config)?;
            let samples = samples.unwrap_or(config.eval.diversity_samples);
            if samples < 2 {
                return Err(CliError::Usage("--samples must be at least 2".into()));
            }
            let tasks = config.env.eval_tasks(policy.tasks.unwrap_or(config.eval.tasks));
            let (t, seed) = (config.eval.temperature, config.eval.seed);
            let report = with_policy(&config, &policy, |p| Ok(diversity_entropy(p, &tasks, samples, t, seed)?))?;
            let path = config.output_dir.join("diversity.json");
            write_json(&path, &serde_json::to_value(&report).expect("reports serialize"))?;
            writeln!(out, "mean entropy = {:.4} nats over {} tasks", report.mean_entropy, tasks.len())
                .map_err(stdout_err)?;
            write_manifest(&config, "eval diversity", started, &["diversity.json".into()])
        }
        EvalCommand::Sweep { policy, axis } => {
            let config = prepare(&policy.config)?;
            let settings = config.eval.settings();
            let count = policy.tasks.unwrap_or(config.eval.tasks);
            let report =
                with_policy(&config, &policy, |p| Ok(difficulty_sweep(p, &config.env, &axis, count, &settings)?))?;
            let path = config.output_dir.join("sweep.csv");
            fs::write(&path, report.to_csv()).map_err(io_at(&path))?;
            for (d, row) in report.axis.iter().zip(&report.rows) {
                let rates: Vec<String> = row.rates.iter().map(|r| format!("{r:.4}")).collect();
                writeln!(out, "difficulty {d}: {}", rates.join(" ")).map_err(stdout_err)?;
            }
            write_manifest(&config, "eval sweep", started, &["sweep.csv".into()])
        }
    }
}

fn export(args: ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let started = unix_time();
    let config = prepare(&args.policy.config)?;
    let path = args.out.clone().unwrap_or_else(|| config.output_dir.join("experience.jsonl"));
    let batch = with_policy(&config, &args.policy, |p| {
        Ok(collect_batch(&p, &config.train, &config.env, config.seed, args.epoch)?)
    })?;
    let file = File::create(&path).map_err(io_at(&path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", json!({ "schema": EXPERIENCE_SCHEMA })).map_err(io_at(&path))?;
    let written = export_experience(&batch, &mut w)?;
    writeln!(out, "exported {written} records from {} trials to {}", batch.len(), path.display())
        .map_err(stdout_err)?;
    write_manifest(&config, "export", started, &[file_name(&path)])
}

/// JSON-lines trajectory log; the first line names the schema.
pub struct JsonlSink {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl JsonlSink {
    pub fn create(path: &Path, schema: &str) -> Result<Self, CliError> {
        let file = File::create(path).map_err(io_at(path))?;
        let mut writer = BufWriter::new(file);
        writeln!(writer, "{}", json!({ "schema": schema })).map_err(io_at(path))?;
        Ok(JsonlSink { path: path.to_path_buf(), writer })
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush().map_err(io_at(&self.path))
    }
}

impl TrajectorySink for JsonlSink {
    fn append(&mut self, record: &StepRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.writer, record)?;
        self.writer.write_all(b"\n")
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("values serialize");
    fs::write(path, text + "\n").map_err(io_at(path))
}

fn write_manifest(config: &RunConfig, command: &str, started: f64, artifacts: &[String]) -> Result<(), CliError> {
    let manifest = json!({
        "command": command,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "finished_unix": unix_time(),
        "seed": config.seed,
        "config": config,
        "artifacts": artifacts,
    });
    write_json(&config.output_dir.join("manifest.json"), &manifest)
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn unix_time() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}
