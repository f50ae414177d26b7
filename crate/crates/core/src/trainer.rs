//! Policy-gradient training of the parametric backend.
//!
//! Each update samples `batch_tasks` fresh tasks, rolls out a group of
//! trials per task, turns trial returns into advantages with the configured
//! estimator and takes one ascent step along the mean of
//! `A * grad log pi(a | s, H)` over every (state, action) pair in the batch.
//! RL mode is the special case of single-episode trials.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::credit::{advantages, CreditError, DiscountConfig, Estimator, ReturnTable, TrialAdvantages};
use crate::env::{EnvError, EnvKind, TaskInstance};
use crate::memory::{MemoryDigest, MemoryMode};
use crate::policy::{encode_features, ParametricPolicy, PolicyBackend, PolicyParams, Scored, ROLLOUT_TEMPERATURE};
use crate::rng::{derive_seed, tags};
use crate::rollout::{run_trial, Trial, TrialSettings};

/// Training task seeds keep this bit clear; evaluation seeds set it.
pub const EVAL_SEED_BIT: u64 = 1 << 63;
/// Parameters beyond this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Credit(#[from] CreditError),
    #[error("parameters diverged at epoch {epoch}: max |theta| = {max_abs:e} exceeds {DIVERGENCE_LIMIT:e}")]
    Diverged { epoch: usize, max_abs: f64 },
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Rl,
    MetaRl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub group_size: usize,
    /// Episode budget per trial; RL mode always uses 1.
    pub episodes: usize,
    pub discount: DiscountConfig,
    pub estimator: Estimator,
    pub learning_rate: f64,
    /// Gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Heavy-ball momentum; 0 is plain gradient ascent.
    pub momentum: f64,
    pub batch_tasks: usize,
    pub epochs: usize,
    pub rollout_temperature: f64,
    pub memory_mode: MemoryMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::MetaRl,
            group_size: 8,
            episodes: 3,
            discount: DiscountConfig::default(),
            estimator: Estimator::GroupNorm,
            learning_rate: 0.05,
            grad_clip: 10.0,
            momentum: 0.0,
            batch_tasks: 16,
            epochs: 100,
            rollout_temperature: ROLLOUT_TEMPERATURE,
            memory_mode: MemoryMode::Both,
        }
    }
}

impl TrainConfig {
    /// Episodes per trial actually run.
    pub fn budget(&self) -> usize {
        match self.mode {
            TrainMode::Rl => 1,
            TrainMode::MetaRl => self.episodes,
        }
    }

    /// Episodes consumed by one update.
    pub fn episodes_per_update(&self) -> usize {
        self.batch_tasks * self.group_size * self.budget()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.discount.validate()?;
        if self.group_size < self.estimator.min_group() {
            return bad(format!("group_size {} is too small for {:?}", self.group_size, self.estimator));
        }
        if self.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.grad_clip.is_nan() || self.grad_clip < 0.0 {
            return bad(format!("grad_clip must be nonnegative, got {}", self.grad_clip));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_tasks == 0 || self.epochs == 0 {
            return bad("batch_tasks and epochs must be positive".into());
        }
        if self.rollout_temperature.is_nan() || self.rollout_temperature <= 0.0 {
            return bad("rollout_temperature must be positive".into());
        }
        Ok(())
    }

    fn trial_settings(&self) -> TrialSettings {
        TrialSettings {
            budget: self.budget(),
            memory_mode: self.memory_mode,
            temperature: self.rollout_temperature,
            reflection_temperature: self.rollout_temperature,
        }
    }
}

/// The RL configuration consuming as many episodes per update as `meta`,
/// paired with `meta` itself.
pub fn matched_budget_pair(meta: &TrainConfig) -> (TrainConfig, TrainConfig) {
    let mut rl = meta.clone();
    rl.mode = TrainMode::Rl;
    rl.group_size = meta.group_size * meta.budget();
    rl.episodes = 1;
    (rl, meta.clone())
}

/// Draws training tasks of one environment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSampler {
    pub env_kind: EnvKind,
    pub board_size: usize,
    pub difficulty: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl TaskSampler {
    pub fn new(env_kind: EnvKind, board_size: usize, difficulty: usize) -> Self {
        TaskSampler { env_kind, board_size, difficulty, max_steps: None }
    }

    pub fn task(&self, seed: u64) -> TaskInstance {
        let t = TaskInstance::new(self.env_kind, self.board_size, self.difficulty, seed);
        match self.max_steps {
            Some(m) => t.with_max_steps(m),
            None => t,
        }
    }

    /// Task `index` of update `epoch`, from the training half of the seed space.
    pub fn training_task(&self, root: u64, epoch: usize, index: usize) -> TaskInstance {
        self.task(derive_seed(root, &[tags::TRAIN_TASK, epoch as u64, index as u64]) & !EVAL_SEED_BIT)
    }

    /// `count` held-out tasks, disjoint from every training task.
    pub fn eval_tasks(&self, count: usize) -> Vec<TaskInstance> {
        (0..count as u64).map(|i| self.task(EVAL_SEED_BIT | i)).collect()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        self.task(0).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_objective: f64,
    /// Fraction of trials that succeeded in any episode.
    pub success_rate: f64,
    /// Fraction of trials whose first episode succeeded.
    pub first_episode_success: f64,
    pub mean_episodes: f64,
    pub grad_norm: f64,
    pub pairs: usize,
}

/// Rollouts of one update together with their credit assignment.
#[derive(Debug, Clone)]
pub struct ExperienceBatch {
    pub trial_ids: Vec<u64>,
    pub trials: Vec<Trial>,
    pub returns: Vec<ReturnTable>,
    pub advantages: Vec<TrialAdvantages>,
}

impl ExperienceBatch {
    pub fn empty() -> Self {
        ExperienceBatch { trial_ids: Vec::new(), trials: Vec::new(), returns: Vec::new(), advantages: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn episode_count(&self) -> usize {
        self.trials.iter().map(|t| t.episodes.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub sampler: TaskSampler,
    pub seed: u64,
    /// Updates completed.
    pub epoch: usize,
    pub params: PolicyParams,
    pub velocity: Vec<f64>,
    pub metrics: Vec<EpochMetrics>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoints always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| TrainError::Format(e.to_string()))?;
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(TrainError::Format(format!(
                "unsupported checkpoint format {} (expected {CHECKPOINT_FORMAT_VERSION})",
                c.format_version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn policy(&self) -> ParametricPolicy {
        ParametricPolicy::new(self.params.clone())
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub sampler: TaskSampler,
    pub seed: u64,
    pub params: PolicyParams,
    velocity: Vec<f64>,
    epoch: usize,
    metrics: Vec<EpochMetrics>,
}

impl Trainer {
    pub fn new(config: TrainConfig, sampler: TaskSampler, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        sampler.validate()?;
        let params = PolicyParams::zeros(sampler.env_kind, sampler.board_size);
        let velocity = vec![0.0; params.dim()];
        Ok(Trainer { config, sampler, seed, params, velocity, epoch: 0, metrics: Vec::new() })
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self, TrainError> {
        checkpoint.config.validate()?;
        if checkpoint.velocity.len() != checkpoint.params.dim() {
            return Err(TrainError::Format("velocity length does not match the parameters".into()));
        }
        Ok(Trainer {
            config: checkpoint.config,
            sampler: checkpoint.sampler,
            seed: checkpoint.seed,
            params: checkpoint.params,
            velocity: checkpoint.velocity,
            epoch: checkpoint.epoch,
            metrics: checkpoint.metrics,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn metrics(&self) -> &[EpochMetrics] {
        &self.metrics
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            sampler: self.sampler,
            seed: self.seed,
            epoch: self.epoch,
            params: self.params.clone(),
            velocity: self.velocity.clone(),
            metrics: self.metrics.clone(),
        }
    }

    /// Rolls out the groups of the next update under the current parameters.
    pub fn collect(&self) -> Result<ExperienceBatch, TrainError> {
        let policy = ParametricPolicy::new(self.params.clone());
        collect_batch(&policy, &self.config, &self.sampler, self.seed, self.epoch)
    }

    /// Runs one update and returns its metrics.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics, TrainError> {
        self.run_epoch_observed(&mut |_| Ok(()))
    }

    /// Like [`Self::run_epoch`], handing the batch to `observe` before the update.
    pub fn run_epoch_observed(
        &mut self,
        observe: &mut dyn FnMut(&ExperienceBatch) -> io::Result<()>,
    ) -> Result<EpochMetrics, TrainError> {
        let batch = self.collect()?;
        observe(&batch)?;
        let (grad, pairs) = batch_gradient(&self.params, &batch, self.config.rollout_temperature);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        self.apply(&grad, grad_norm);

        let n = batch.len() as f64;
        let metrics = EpochMetrics {
            epoch: self.epoch,
            mean_objective: batch.returns.iter().map(|r| r.trial_objective()).sum::<f64>() / n,
            success_rate: batch.trials.iter().filter(|t| t.success()).count() as f64 / n,
            first_episode_success: batch.trials.iter().filter(|t| t.episodes[0].success).count() as f64 / n,
            mean_episodes: batch.episode_count() as f64 / n,
            grad_norm,
            pairs,
        };
        self.epoch += 1;
        self.params.version = self.epoch as u64;
        self.metrics.push(metrics.clone());
        let max_abs = self.params.max_abs();
        if !self.params.is_finite() || max_abs > DIVERGENCE_LIMIT {
            return Err(TrainError::Diverged { epoch: self.epoch, max_abs });
        }
        Ok(metrics)
    }

    fn apply(&mut self, grad: &[f64], grad_norm: f64) {
        let clip = self.config.grad_clip;
        let scale = if clip > 0.0 && grad_norm > clip { clip / grad_norm } else { 1.0 };
        let mut flat = self.params.to_flat();
        for ((p, v), g) in flat.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.config.momentum * *v + scale * g;
            *p += self.config.learning_rate * *v;
        }
        self.params.set_flat(&flat);
    }

    /// Runs the remaining configured epochs.
    pub fn run(&mut self) -> Result<Checkpoint, TrainError> {
        while self.epoch < self.config.epochs {
            self.run_epoch()?;
        }
        Ok(self.checkpoint())
    }
}

/// Rolls out and scores the groups of update `epoch` with any backend.
pub fn collect_batch<P: PolicyBackend>(
    policy: &P,
    config: &TrainConfig,
    sampler: &TaskSampler,
    seed: u64,
    epoch: usize,
) -> Result<ExperienceBatch, TrainError> {
    let settings = config.trial_settings();
    let (tasks, group) = (config.batch_tasks, config.group_size);
    let trials = (0..tasks * group)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / group, k % group);
            let task = sampler.training_task(seed, epoch, i);
            let trial_seed = derive_seed(seed, &[tags::TRAIN_ROLLOUT, epoch as u64, i as u64, j as u64]);
            run_trial(&task, policy, &settings, trial_seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let returns: Vec<ReturnTable> = trials.iter().map(|t| ReturnTable::from_trial(t, &config.discount)).collect();
    let mut adv = Vec::with_capacity(trials.len());
    for chunk in returns.chunks(group) {
        adv.extend(advantages(chunk, config.estimator)?.trials);
    }
    let base = (epoch * tasks * group) as u64;
    Ok(ExperienceBatch {
        trial_ids: (0..trials.len() as u64).map(|k| base + k).collect(),
        trials,
        returns,
        advantages: adv,
    })
}

/// Mean of `A * grad log pi` over every (state, action) pair of the batch,
/// and the number of pairs. Per-trial sums are reduced in batch order.
pub fn batch_gradient(params: &PolicyParams, batch: &ExperienceBatch, temperature: f64) -> (Vec<f64>, usize) {
    let per_trial: Vec<(Vec<f64>, usize)> = batch
        .trials
        .par_iter()
        .zip(batch.advantages.par_iter())
        .map(|(trial, adv)| trial_gradient(params, trial, adv, temperature))
        .collect();
    let mut total = vec![0.0; params.dim()];
    let mut pairs = 0;
    for (g, n) in per_trial {
        for (t, v) in total.iter_mut().zip(&g) {
            *t += v;
        }
        pairs += n;
    }
    if pairs > 0 {
        for t in &mut total {
            *t /= pairs as f64;
        }
    }
    (total, pairs)
}

fn trial_gradient(params: &PolicyParams, trial: &Trial, adv: &TrialAdvantages, temperature: f64) -> (Vec<f64>, usize) {
    let mut grad = vec![0.0; params.dim()];
    let mut pairs = 0;
    for (episode, advs) in trial.episodes.iter().zip(&adv.actions) {
        let digest = MemoryDigest::new(&episode.memory_used);
        for (step, &a) in episode.steps.iter().zip(advs) {
            pairs += 1;
            if a == 0.0 {
                continue;
            }
            let scored = Scored::new(params, &step.state, &digest);
            let index = scored.actions.iter().position(|x| *x == step.action).expect("recorded actions are admissible");
            scored.accumulate_grad(index, temperature, a, &mut grad);
        }
    }
    (grad, pairs)
}

/// Trains from scratch and returns the final checkpoint.
pub fn train(config: TrainConfig, sampler: TaskSampler, seed: u64) -> Result<Checkpoint, TrainError> {
    Trainer::new(config, sampler, seed)?.run()
}

/// Context of an experience record: prompt text for text backends, the
/// feature vector for the parametric backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperienceContext {
    Text(String),
    Features(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Action,
    Reflection,
}

/// One advantage-annotated decision, for external trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    pub trial_id: u64,
    pub episode: usize,
    /// For reflections, the length of the reflected episode.
    pub step: usize,
    pub kind: RecordKind,
    pub context: ExperienceContext,
    pub action: String,
    pub advantage: f64,
    #[serde(rename = "G")]
    pub big_g: f64,
}

#[derive(Debug, thiserror::Error)]
#[error("experience export failed after {written} record(s): {source}")]
pub struct ExportError {
    pub written: usize,
    #[source]
    pub source: io::Error,
}

/// The records of `batch` in order: each episode's actions, then the
/// reflection that followed it.
pub fn experience_records(batch: &ExperienceBatch) -> Vec<ExperienceRecord> {
    let mut out = Vec::new();
    for (k, trial) in batch.trials.iter().enumerate() {
        let (ret, adv, id) = (&batch.returns[k], &batch.advantages[k], batch.trial_ids[k]);
        for (n, episode) in trial.episodes.iter().enumerate() {
            for (t, step) in episode.steps.iter().enumerate() {
                let context = match &step.prompt {
                    Some(p) => ExperienceContext::Text(p.clone()),
                    None => {
                        ExperienceContext::Features(encode_features(&step.state, &step.action, &episode.memory_used).0)
                    }
                };
                out.push(ExperienceRecord {
                    trial_id: id,
                    episode: n,
                    step: t,
                    kind: RecordKind::Action,
                    context,
                    action: step.action.to_string(),
                    advantage: adv.actions[n][t],
                    big_g: ret.big_g[n][t],
                });
            }
            if let Some(Some(r)) = trial.reflections.get(n) {
                out.push(ExperienceRecord {
                    trial_id: id,
                    episode: n,
                    step: episode.steps.len(),
                    kind: RecordKind::Reflection,
                    context: ExperienceContext::Text(
                        r.prompt.clone().unwrap_or_else(|| episode.final_state.render_text()),
                    ),
                    action: r.reflection.text(),
                    advantage: adv.reflections.get(n).copied().unwrap_or(0.0),
                    big_g: ret.reflection_return(n),
                });
            }
        }
    }
    out
}

/// Writes `batch` as JSONL and returns the number of records written.
pub fn export_experience(batch: &ExperienceBatch, sink: &mut dyn Write) -> Result<usize, ExportError> {
    let mut written = 0;
    for record in experience_records(batch) {
        let line = serde_json::to_string(&record).expect("records always serialize");
        writeln!(sink, "{line}").map_err(|source| ExportError { written, source })?;
        written += 1;
    }
    sink.flush().map_err(|source| ExportError { written, source })?;
    Ok(written)
}
