//! Run configuration files.
//!
//! A run is described by one TOML file with an explicit `schema_version`.
//! Unknown keys are rejected, and every validation failure names the
//! offending key and, when it appears in the file, its line.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvKind;
use crate::eval::{EvalSettings, Protocol, EVAL_TASKS};
use crate::memory::MemoryMode;
use crate::policy::llm::{DEFAULT_ACTIONS_PER_TURN, DEFAULT_MALFORMED_RETRIES, DEFAULT_MAX_OUTPUT_TOKENS};
use crate::policy::EVAL_TEMPERATURE;
use crate::trainer::{TaskSampler, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Parametric,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k_max: usize,
    pub protocol: Protocol,
    pub memory_mode: MemoryMode,
    pub temperature: f64,
    pub seed: u64,
    pub tasks: usize,
    pub diversity_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_max: 3,
            protocol: Protocol::SequentialWithMemory,
            memory_mode: MemoryMode::Both,
            temperature: EVAL_TEMPERATURE,
            seed: 0,
            tasks: EVAL_TASKS,
            diversity_samples: 8,
        }
    }
}

impl EvalConfig {
    pub fn settings(&self) -> EvalSettings {
        EvalSettings {
            k_max: self.k_max,
            protocol: self.protocol,
            memory_mode: self.memory_mode,
            temperature: self.temperature,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// OpenAI-compatible API root, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key; empty for unauthenticated endpoints.
    pub api_key_env: String,
    pub max_tokens: usize,
    pub timeout_secs: f64,
    /// Transport retries per completion.
    pub retries: usize,
    /// Re-queries after an unparseable completion.
    pub malformed_retries: usize,
    pub max_concurrency: usize,
    pub actions_per_turn: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: String::new(),
            max_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            timeout_secs: 60.0,
            retries: 3,
            malformed_retries: DEFAULT_MALFORMED_RETRIES,
            max_concurrency: 4,
            actions_per_turn: DEFAULT_ACTIONS_PER_TURN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub backend: Backend,
    pub env: TaskSampler,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub llm: LlmConfig,
}

impl RunConfig {
    pub fn new(env: TaskSampler, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            output_dir: output_dir.into(),
            backend: Backend::Parametric,
            env,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            llm: LlmConfig::default(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configurations always serialize")
    }

    /// Parses and validates `source`; `origin` labels diagnostics.
    pub fn parse(source: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(source).map_err(|e| ConfigError {
            origin: origin.to_string(),
            line: e.span().map(|s| line_of(source, s.start)),
            field: None,
            message: e.message().to_string(),
        })?;
        if let Err((path, message)) = config.check() {
            return Err(ConfigError {
                origin: origin.to_string(),
                line: locate(source, &path),
                field: Some(path.join(".")),
                message,
            });
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            origin: origin.clone(),
            line: None,
            field: None,
            message: e.to_string(),
        })?;
        Self::parse(&source, &origin)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.check().map_err(|(path, message)| ConfigError {
            origin: "<memory>".into(),
            line: None,
            field: Some(path.join(".")),
            message,
        })
    }

    /// First violated constraint as (key path, message).
    fn check(&self) -> Result<(), (Vec<&'static str>, String)> {
        fn fail<T>(path: &[&'static str], message: String) -> Result<T, (Vec<&'static str>, String)> {
            Err((path.to_vec(), message))
        }
        fn unit(path: &[&'static str], v: f64) -> Result<(), (Vec<&'static str>, String)> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                fail(path, format!("{v} is outside the valid range [0, 1]"))
            }
        }
        fn positive(path: &[&'static str], v: f64) -> Result<(), (Vec<&'static str>, String)> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                fail(path, format!("{v} must be a positive number"))
            }
        }
        fn at_least(path: &[&'static str], v: usize, min: usize) -> Result<(), (Vec<&'static str>, String)> {
            if v >= min {
                Ok(())
            } else {
                fail(path, format!("{v} must be at least {min}"))
            }
        }

        if self.schema_version != SCHEMA_VERSION {
            return fail(
                &["schema_version"],
                format!("{} is not supported (expected {SCHEMA_VERSION})", self.schema_version),
            );
        }
        if self.seed > i64::MAX as u64 {
            return fail(&["seed"], format!("{} exceeds the largest representable seed {}", self.seed, i64::MAX));
        }
        if let Err(e) = self.env.validate() {
            let key = match e {
                crate::env::EnvError::CapacityExceeded { .. } => "difficulty",
                _ => "board_size",
            };
            return fail(&["env", key], e.to_string());
        }
        let t = &self.train;
        unit(&["train", "discount", "gamma_step"], t.discount.gamma_step)?;
        unit(&["train", "discount", "gamma_traj"], t.discount.gamma_traj)?;
        at_least(&["train", "group_size"], t.group_size, t.estimator.min_group())?;
        at_least(&["train", "episodes"], t.episodes, 1)?;
        at_least(&["train", "batch_tasks"], t.batch_tasks, 1)?;
        at_least(&["train", "epochs"], t.epochs, 1)?;
        positive(&["train", "learning_rate"], t.learning_rate)?;
        positive(&["train", "rollout_temperature"], t.rollout_temperature)?;
        if t.grad_clip.is_nan() || t.grad_clip < 0.0 {
            return fail(&["train", "grad_clip"], format!("{} must be nonnegative", t.grad_clip));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return fail(&["train", "momentum"], format!("{} is outside the valid range [0, 1)", t.momentum));
        }
        let e = &self.eval;
        at_least(&["eval", "k_max"], e.k_max, 1)?;
        at_least(&["eval", "tasks"], e.tasks, 1)?;
        at_least(&["eval", "diversity_samples"], e.diversity_samples, 2)?;
        positive(&["eval", "temperature"], e.temperature)?;
        if e.seed > i64::MAX as u64 {
            return fail(&["eval", "seed"], format!("{} exceeds the largest representable seed", e.seed));
        }
        let l = &self.llm;
        if self.backend == Backend::Llm {
            if self.env.env_kind == EnvKind::Coin {
                return fail(&["env", "env_kind"], "the llm backend has no prompts for the coin environment".into());
            }
            if !(l.base_url.starts_with("http://") || l.base_url.starts_with("https://")) {
                return fail(&["llm", "base_url"], format!("{:?} must start with http:// or https://", l.base_url));
            }
        }
        at_least(&["llm", "max_tokens"], l.max_tokens, 1)?;
        at_least(&["llm", "max_concurrency"], l.max_concurrency, 1)?;
        at_least(&["llm", "actions_per_turn"], l.actions_per_turn, 1)?;
        positive(&["llm", "timeout_secs"], l.timeout_secs)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: String,
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.origin)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        match &self.field {
            Some(field) => write!(f, ": {field}: {}", self.message),
            None => write!(f, ": {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// 1-based line of `path` (table names then key) in `source`, if written
/// there explicitly. Understands `[table]` headers and dotted keys.
pub fn locate(source: &str, path: &[&str]) -> Option<usize> {
    let mut table: Vec<String> = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            table = header.split('.').map(|s| s.trim().to_string()).collect();
            continue;
        }
        let Some((key, _)) = line.split_once('=') else { continue };
        let mut full = table.clone();
        full.extend(key.split('.').map(|s| s.trim().trim_matches('"').to_string()));
        if full.iter().map(String::as_str).eq(path.iter().copied()) {
            return Some(i + 1);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
schema_version = 1
seed = 7
output_dir = "runs/ms6"

[env]
env_kind = "minesweeper"
board_size = 6
difficulty = 3

[train]
mode = "meta_rl"
group_size = 8
episodes = 3

[train.discount]
gamma_step = 1.0
gamma_traj = 0.6
"#;

    #[test]
    fn sample_parses_with_defaults() {
        let c = RunConfig::parse(SAMPLE, "ms6.toml").unwrap();
        assert_eq!(c.train.learning_rate, 0.05);
        assert_eq!(c.eval.temperature, 0.7);
        assert_eq!(c.llm.max_tokens, 1024);
        assert_eq!(RunConfig::parse(&c.to_toml(), "again").unwrap(), c);
    }

    #[test]
    fn out_of_range_discount_names_field_and_line() {
        let bad = SAMPLE.replace("gamma_traj = 0.6", "gamma_traj = 1.5");
        let e = RunConfig::parse(&bad, "ms6.toml").unwrap_err();
        assert_eq!(e.field.as_deref(), Some("train.discount.gamma_traj"));
        assert_eq!(e.line, Some(18));
        assert_eq!(e.to_string(), "ms6.toml:18: train.discount.gamma_traj: 1.5 is outside the valid range [0, 1]");
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let bad = SAMPLE.replace("episodes = 3", "episodes = 3\nepisodez = 4");
        let e = RunConfig::parse(&bad, "ms6.toml").unwrap_err();
        assert!(e.message.contains("episodez"), "{e}");
        assert_eq!(e.line, Some(15));
    }

    #[test]
    fn capacity_is_checked() {
        let bad = SAMPLE.replace("difficulty = 3", "difficulty = 36");
        let e = RunConfig::parse(&bad, "ms6.toml").unwrap_err();
        assert_eq!(e.field.as_deref(), Some("env.difficulty"));
        assert_eq!(e.line, Some(9));
    }

    #[test]
    fn dotted_keys_are_located() {
        assert_eq!(locate("a = 1\n[train]\ndiscount.gamma_traj = 2", &["train", "discount", "gamma_traj"]), Some(3));
        assert_eq!(locate("[train]\nx = 1", &["train", "y"]), None);
    }
}
