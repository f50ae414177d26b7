//! pass@k, trajectory diversity and difficulty sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvError, TaskInstance};
use crate::memory::{MemoryMode, MemoryState};
use crate::policy::{PolicyBackend, EVAL_TEMPERATURE};
use crate::rng::{derive_seed, stream, tags};
use crate::rollout::{run_episode, run_trial, TrialSettings};
use crate::trainer::TaskSampler;

/// Held-out tasks per environment.
pub const EVAL_TASKS: usize = 256;
const DIVERSITY_TAG: u64 = 0x44_56;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// `k` unrelated episodes per task.
    Independent,
    /// One trial of `k` episodes with memory carried between them.
    SequentialWithMemory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub k_max: usize,
    pub protocol: Protocol,
    pub memory_mode: MemoryMode,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            k_max: 3,
            protocol: Protocol::SequentialWithMemory,
            memory_mode: MemoryMode::Both,
            temperature: EVAL_TEMPERATURE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_seed: u64,
    /// Attempt index of the first success.
    pub first_success: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKReport {
    pub protocol: Protocol,
    pub memory_mode: MemoryMode,
    pub temperature: f64,
    pub seed: u64,
    pub task_count: usize,
    pub k: Vec<usize>,
    pub rates: Vec<f64>,
    pub tasks: Vec<TaskOutcome>,
}

impl PassAtKReport {
    pub fn rate(&self, k: usize) -> f64 {
        self.rates[k - 1]
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err("rate outside [0, 1]".into());
        }
        if self.rates.windows(2).any(|w| w[1] < w[0]) {
            return Err("pass@k decreases in k".into());
        }
        Ok(())
    }

    /// One row per task per k.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_index,task_seed,k,success\n");
        for (i, t) in self.tasks.iter().enumerate() {
            for &k in &self.k {
                let ok = t.first_success.is_some_and(|s| s < k);
                writeln!(out, "{i},{},{k},{}", t.task_seed, u8::from(ok)).unwrap();
            }
        }
        out
    }

    /// Summary without per-task rows.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "protocol": self.protocol,
            "memory_mode": self.memory_mode,
            "temperature": self.temperature,
            "seed": self.seed,
            "task_count": self.task_count,
            "pass_at_k": self.k.iter().zip(&self.rates).map(|(k, r)| (format!("pass@{k}"), *r)).collect::<BTreeMap<_, _>>(),
        })
    }
}

/// Success rate within the first `k` attempts, for `k = 1..=k_max`.
pub fn pass_at_k<P: PolicyBackend + ?Sized>(
    policy: &P,
    tasks: &[TaskInstance],
    settings: &EvalSettings,
) -> Result<PassAtKReport, EnvError> {
    assert!(settings.k_max >= 1, "k_max must be at least 1");
    let outcomes = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| -> Result<TaskOutcome, EnvError> {
            let root = derive_seed(settings.seed, &[tags::EVAL, i as u64]);
            let first_success = match settings.protocol {
                Protocol::Independent => {
                    let empty = MemoryState::new(MemoryMode::Disabled);
                    let mut found = None;
                    for attempt in 0..settings.k_max {
                        let mut rng = stream(root, &[tags::EPISODE, attempt as u64]);
                        if run_episode(task, policy, 0, &empty, settings.temperature, &mut rng)?.success {
                            found = Some(attempt);
                            break;
                        }
                    }
                    found
                }
                Protocol::SequentialWithMemory => {
                    let trial_settings = TrialSettings {
                        budget: settings.k_max,
                        memory_mode: settings.memory_mode,
                        temperature: settings.temperature,
                        reflection_temperature: settings.temperature,
                    };
                    run_trial(task, policy, &trial_settings, root)?.first_success()
                }
            };
            Ok(TaskOutcome { task_seed: task.seed, first_success })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = outcomes.len().max(1) as f64;
    let k: Vec<usize> = (1..=settings.k_max).collect();
    let rates = k
        .iter()
        .map(|&k| outcomes.iter().filter(|o| o.first_success.is_some_and(|s| s < k)).count() as f64 / n)
        .collect();
    Ok(PassAtKReport {
        protocol: settings.protocol,
        memory_mode: settings.memory_mode,
        temperature: settings.temperature,
        seed: settings.seed,
        task_count: tasks.len(),
        k,
        rates,
        tasks: outcomes,
    })
}

/// Shannon entropy in nats of the empirical distribution given by `counts`.
pub fn entropy_of_counts(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    h.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub samples: usize,
    pub temperature: f64,
    pub seed: u64,
    pub task_seeds: Vec<u64>,
    /// Entropy per task, in nats.
    pub entropies: Vec<f64>,
    /// Distinct trajectories per task.
    pub distinct: Vec<usize>,
    pub mean_entropy: f64,
}

/// Samples `samples` independent episodes per task and measures how spread
/// out they are over distinct (observation, action) sequences.
pub fn diversity_entropy<P: PolicyBackend + ?Sized>(
    policy: &P,
    tasks: &[TaskInstance],
    samples: usize,
    temperature: f64,
    seed: u64,
) -> Result<DiversityReport, EnvError> {
    assert!(samples >= 2, "diversity needs at least two samples per task");
    let per_task = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| -> Result<(f64, usize), EnvError> {
            let mut buckets: BTreeMap<Vec<(String, String)>, usize> = BTreeMap::new();
            let empty = MemoryState::new(MemoryMode::Disabled);
            for m in 0..samples {
                let mut rng = stream(seed, &[DIVERSITY_TAG, i as u64, m as u64]);
                let ep = run_episode(task, policy, 0, &empty, temperature, &mut rng)?;
                let key = ep.steps.iter().map(|s| (s.observation_text(), s.action.to_string())).collect();
                *buckets.entry(key).or_default() += 1;
            }
            let counts: Vec<usize> = buckets.into_values().collect();
            Ok((entropy_of_counts(&counts), counts.len()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let entropies: Vec<f64> = per_task.iter().map(|p| p.0).collect();
    let mean_entropy = entropies.iter().sum::<f64>() / entropies.len().max(1) as f64;
    Ok(DiversityReport {
        samples,
        temperature,
        seed,
        task_seeds: tasks.iter().map(|t| t.seed).collect(),
        distinct: per_task.iter().map(|p| p.1).collect(),
        entropies,
        mean_entropy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub sampler: TaskSampler,
    pub task_count: usize,
    pub settings: EvalSettings,
    pub axis: Vec<usize>,
    pub rows: Vec<PassAtKReport>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("difficulty,k,pass_rate\n");
        for (d, row) in self.axis.iter().zip(&self.rows) {
            for (k, r) in row.k.iter().zip(&row.rates) {
                writeln!(out, "{d},{k},{r}").unwrap();
            }
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("sweep axis must be strictly increasing")]
    AxisNotIncreasing,
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// pass@k of a frozen policy at each difficulty on the axis.
pub fn difficulty_sweep<P: PolicyBackend + ?Sized>(
    policy: &P,
    sampler: &TaskSampler,
    axis: &[usize],
    task_count: usize,
    settings: &EvalSettings,
) -> Result<SweepReport, SweepError> {
    if axis.is_empty() || axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SweepError::AxisNotIncreasing);
    }
    let mut rows = Vec::with_capacity(axis.len());
    for &difficulty in axis {
        let s = TaskSampler { difficulty, ..*sampler };
        s.validate()?;
        rows.push(pass_at_k(policy, &s.eval_tasks(task_count), settings)?);
    }
    Ok(SweepReport { sampler: *sampler, task_count, settings: *settings, axis: axis.to_vec(), rows })
}
