//! Policies conditioned on inter-episode memory.
//!
//! A [`PolicyBackend`] chooses actions given the current state and the
//! memory of earlier episodes, and writes the reflection that is added to
//! memory after a failed episode. Two backends exist:
//!
//! * [`ParametricPolicy`]: a linear-softmax policy over hand-built features
//!   with exact gradients, trainable at desk scale.
//! * [`llm::LlmPolicy`]: an inference-only adapter that renders text prompts
//!   and parses tagged completions.

pub mod features;
pub mod llm;
pub mod parse;
pub mod prompt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{action_slot, slot_count, Action, Env, EnvKind, TaskInstance};
use crate::memory::{MemoryDigest, MemoryState, Reflection, StructuredReflection};
use crate::rng::StreamRng;

pub use features::{encode_features, feature_dim, FeatureVector};

/// Sampling temperature during training rollouts.
pub const ROLLOUT_TEMPERATURE: f64 = 1.0;
/// Sampling temperature during evaluation.
pub const EVAL_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("malformed response: {reason}: {text:?}")]
    MalformedResponse { reason: String, text: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("action {0} is not admissible")]
    Inadmissible(String),
    #[error("no admissible actions in a terminal state")]
    NoActions,
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Prompt(#[from] prompt::PromptError),
}

/// Weights of the linear score `w . phi(s, a, H) + b[slot(a)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub kind: EnvKind,
    pub board_size: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub version: u64,
}

impl PolicyParams {
    pub fn zeros(kind: EnvKind, board_size: usize) -> Self {
        PolicyParams {
            kind,
            board_size,
            weights: vec![0.0; feature_dim(kind)],
            bias: vec![0.0; slot_count(kind, board_size)],
            version: 0,
        }
    }

    /// Total parameter count (weights then biases).
    pub fn dim(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }

    /// Replaces the values from a flat vector laid out like [`Self::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.dim(), "flat parameter length mismatch");
        let (w, b) = flat.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.weights.iter().chain(&self.bias).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Checks that these parameters fit `env`.
    pub fn compatible_with(&self, env: &Env) -> bool {
        self.kind == env.kind() && self.board_size == env.board_size()
    }
}

/// A categorical distribution over the admissible actions of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub actions: Vec<Action>,
    pub logits: Vec<f64>,
    pub temperature: f64,
}

impl ActionDistribution {
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits, self.temperature)
    }

    pub fn probability_of(&self, action: &Action) -> Option<f64> {
        let i = self.actions.iter().position(|a| a == action)?;
        Some(self.probabilities()[i])
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Action {
        self.actions[sample_index(&self.probabilities(), rng)]
    }
}

/// Numerically stable `softmax(logits / temperature)`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    assert!(temperature > 0.0, "temperature must be positive");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn sample_index(probs: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Features and logits of every admissible action of one state.
pub(crate) struct Scored {
    pub actions: Vec<Action>,
    pub features: Vec<f64>,
    pub slots: Vec<usize>,
    pub logits: Vec<f64>,
    pub dim: usize,
}

impl Scored {
    pub fn new(params: &PolicyParams, env: &Env, digest: &MemoryDigest) -> Self {
        let actions = env.admissible_actions();
        let dim = feature_dim(env.kind());
        let mut features = vec![0.0; actions.len() * dim];
        let mut slots = Vec::with_capacity(actions.len());
        let mut logits = Vec::with_capacity(actions.len());
        for (i, a) in actions.iter().enumerate() {
            let row = &mut features[i * dim..(i + 1) * dim];
            features::encode_into(env, a, digest, row);
            let slot = action_slot(a, env.board_size());
            let dot: f64 = row.iter().zip(&params.weights).map(|(x, w)| x * w).sum();
            logits.push(dot + params.bias[slot]);
            slots.push(slot);
        }
        Scored { actions, features, slots, logits, dim }
    }

    /// Adds `scale * grad log pi_T(actions[index])` into `grad`, where `pi_T`
    /// samples at `temperature`; returns the log-probability.
    pub fn accumulate_grad(&self, index: usize, temperature: f64, scale: f64, grad: &mut [f64]) -> f64 {
        let probs = softmax(&self.logits, temperature);
        let scale = scale / temperature;
        let (gw, gb) = grad.split_at_mut(self.dim);
        let chosen = &self.features[index * self.dim..(index + 1) * self.dim];
        for (g, x) in gw.iter_mut().zip(chosen) {
            *g += scale * x;
        }
        gb[self.slots[index]] += scale;
        for (i, p) in probs.iter().enumerate() {
            let row = &self.features[i * self.dim..(i + 1) * self.dim];
            for (g, x) in gw.iter_mut().zip(row) {
                *g -= scale * p * x;
            }
            gb[self.slots[i]] -= scale * p;
        }
        probs[index].ln()
    }
}

/// The action distribution of the linear-softmax policy.
pub fn action_distribution(
    params: &PolicyParams,
    env: &Env,
    memory: &MemoryState,
    temperature: f64,
) -> ActionDistribution {
    distribution_with_digest(params, env, &MemoryDigest::new(memory), temperature)
}

pub(crate) fn distribution_with_digest(
    params: &PolicyParams,
    env: &Env,
    digest: &MemoryDigest,
    temperature: f64,
) -> ActionDistribution {
    let scored = Scored::new(params, env, digest);
    ActionDistribution { actions: scored.actions, logits: scored.logits, temperature }
}

/// `log pi(action | env, memory)` at temperature 1 and its exact gradient
/// with respect to the flattened parameters (weights then biases):
/// `phi(a) - sum_i p_i phi(a_i)` for the weights and
/// `onehot(slot(a)) - sum_i p_i onehot(slot(a_i))` for the biases.
pub fn log_prob_grad(
    params: &PolicyParams,
    env: &Env,
    memory: &MemoryState,
    action: &Action,
) -> Result<(f64, Vec<f64>), PolicyError> {
    let scored = Scored::new(params, env, &MemoryDigest::new(memory));
    let index =
        scored.actions.iter().position(|a| a == action).ok_or_else(|| PolicyError::Inadmissible(action.to_string()))?;
    let mut grad = vec![0.0; params.dim()];
    let logp = scored.accumulate_grad(index, 1.0, 1.0, &mut grad);
    Ok((logp, grad))
}

/// Everything a backend sees when choosing the next action(s).
#[derive(Debug, Clone, Copy)]
pub struct TurnContext<'a> {
    pub task: &'a TaskInstance,
    pub initial: &'a Env,
    pub current: &'a Env,
    pub memory: &'a MemoryState,
    /// Actions already taken this episode.
    pub history: &'a [crate::env::Action],
    pub temperature: f64,
}

/// Inputs to the post-episode reflection step.
#[derive(Debug, Clone, Copy)]
pub struct ReflectContext<'a> {
    pub task: &'a TaskInstance,
    pub episode: usize,
    pub initial: &'a Env,
    pub final_state: &'a Env,
    pub actions: &'a [Action],
    pub memory: &'a MemoryState,
    pub temperature: f64,
}

/// One or more actions to execute in order, plus the prompt that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub actions: Vec<Action>,
    pub prompt: Option<String>,
}

pub trait PolicyBackend: Sync {
    fn decide(&self, ctx: &TurnContext<'_>, rng: &mut StreamRng) -> Result<Decision, PolicyError>;

    fn reflect(&self, ctx: &ReflectContext<'_>) -> Result<Reflection, PolicyError>;

    /// The text prompt [`Self::reflect`] sends, for backends that use one.
    fn reflection_prompt(&self, _ctx: &ReflectContext<'_>) -> Option<String> {
        None
    }

    /// Version of the parameters in use, for reproducibility records.
    fn version(&self) -> u64 {
        0
    }
}

impl<P: PolicyBackend + ?Sized> PolicyBackend for &P {
    fn decide(&self, ctx: &TurnContext<'_>, rng: &mut StreamRng) -> Result<Decision, PolicyError> {
        (**self).decide(ctx, rng)
    }

    fn reflect(&self, ctx: &ReflectContext<'_>) -> Result<Reflection, PolicyError> {
        (**self).reflect(ctx)
    }

    fn reflection_prompt(&self, ctx: &ReflectContext<'_>) -> Option<String> {
        (**self).reflection_prompt(ctx)
    }

    fn version(&self) -> u64 {
        (**self).version()
    }
}

/// The trainable linear-softmax backend. Reflections are deterministic
/// structured summaries of the failed episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricPolicy {
    pub params: PolicyParams,
}

impl ParametricPolicy {
    pub fn new(params: PolicyParams) -> Self {
        ParametricPolicy { params }
    }

    /// The untrained policy: uniform over admissible actions.
    pub fn uniform(kind: EnvKind, board_size: usize) -> Self {
        ParametricPolicy::new(PolicyParams::zeros(kind, board_size))
    }
}

impl PolicyBackend for ParametricPolicy {
    fn decide(&self, ctx: &TurnContext<'_>, rng: &mut StreamRng) -> Result<Decision, PolicyError> {
        if !self.params.compatible_with(ctx.current) {
            return Err(PolicyError::Unsupported(format!(
                "parameters for {} {}x{} do not fit a {} {}x{} board",
                self.params.kind,
                self.params.board_size,
                self.params.board_size,
                ctx.current.kind(),
                ctx.current.board_size(),
                ctx.current.board_size()
            )));
        }
        let dist = action_distribution(&self.params, ctx.current, ctx.memory, ctx.temperature);
        if dist.actions.is_empty() {
            return Err(PolicyError::NoActions);
        }
        Ok(Decision { actions: vec![dist.sample(rng)], prompt: None })
    }

    fn reflect(&self, ctx: &ReflectContext<'_>) -> Result<Reflection, PolicyError> {
        Ok(Reflection::Structured(StructuredReflection::from_final_state(ctx.episode, ctx.final_state)))
    }

    fn version(&self) -> u64 {
        self.params.version
    }
}
