//! Inference-only adapter that drives a text-completion model.
//!
//! The model is reached through a [`CompletionClient`]; the HTTP client lives
//! in the harness, tests use in-process fakes.

use crate::env::{Env, EnvKind};
use crate::memory::Reflection;
use crate::rng::StreamRng;

use super::parse::{parse_tagged_response, ParsedResponse};
use super::prompt::{render_prompt, PromptBundle, PromptInputs, TemplateId};
use super::{Decision, PolicyBackend, PolicyError, ReflectContext, TurnContext};

/// Output-token budget per completion.
pub const DEFAULT_MAX_OUTPUT_TOKENS: usize = 1024;
/// Re-queries after a response that does not parse.
pub const DEFAULT_MALFORMED_RETRIES: usize = 3;
/// Sokoban moves requested per turn.
pub const DEFAULT_ACTIONS_PER_TURN: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub system: String,
    pub user: String,
    pub max_tokens: usize,
    pub temperature: f64,
    pub stop: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("completion failed after {attempts} attempt(s): {message}")]
pub struct TransportError {
    pub attempts: usize,
    pub message: String,
}

pub trait CompletionClient: Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError>;
}

impl<C: CompletionClient + ?Sized> CompletionClient for &C {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone)]
pub struct LlmPolicy<C> {
    pub client: C,
    pub max_tokens: usize,
    pub malformed_retries: usize,
    pub actions_per_turn: usize,
}

impl<C: CompletionClient> LlmPolicy<C> {
    pub fn new(client: C) -> Self {
        LlmPolicy {
            client,
            max_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            malformed_retries: DEFAULT_MALFORMED_RETRIES,
            actions_per_turn: DEFAULT_ACTIONS_PER_TURN,
        }
    }

    fn actions_for(&self, kind: EnvKind) -> usize {
        if kind == EnvKind::Sokoban {
            self.actions_per_turn.max(1)
        } else {
            1
        }
    }

    fn render_reflection(&self, ctx: &ReflectContext<'_>) -> Result<PromptBundle, PolicyError> {
        let kind = ctx.task.env_kind;
        let id = TemplateId::reflection(kind)?;
        Ok(render_prompt(
            id,
            &inputs(ctx.task, ctx.initial, ctx.final_state, ctx.actions, ctx.memory, self.actions_for(kind)),
        )?)
    }

    /// Sends `prompt`, re-querying while the response does not parse.
    fn query(&self, prompt: &PromptBundle, kind: EnvKind, temperature: f64) -> Result<ParsedResponse, PolicyError> {
        let request = CompletionRequest {
            system: prompt.system_text.clone(),
            user: prompt.user_text.clone(),
            max_tokens: self.max_tokens,
            temperature,
            stop: Vec::new(),
        };
        let mut last = None;
        for _ in 0..=self.malformed_retries {
            let text = self
                .client
                .complete(&request)
                .map_err(|e| PolicyError::Transport { attempts: e.attempts, message: e.message })?;
            match parse_tagged_response(&text, prompt.expected_tag, kind) {
                Ok(parsed) => return Ok(parsed),
                Err(e @ PolicyError::MalformedResponse { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt is made"))
    }
}

fn inputs<'a>(
    task: &'a crate::env::TaskInstance,
    initial: &'a Env,
    current: &'a Env,
    history: &'a [crate::env::Action],
    memory: &'a crate::memory::MemoryState,
    num_actions_per_turn: usize,
) -> PromptInputs<'a> {
    PromptInputs { task, initial, current, history, memory, num_actions_per_turn }
}

impl<C: CompletionClient> PolicyBackend for LlmPolicy<C> {
    fn decide(&self, ctx: &TurnContext<'_>, _rng: &mut StreamRng) -> Result<Decision, PolicyError> {
        let kind = ctx.task.env_kind;
        let n = self.actions_for(kind);
        let id = TemplateId::standard(kind)?;
        let prompt = render_prompt(id, &inputs(ctx.task, ctx.initial, ctx.current, ctx.history, ctx.memory, n))?;
        match self.query(&prompt, kind, ctx.temperature)? {
            ParsedResponse::Actions(mut actions) => {
                actions.truncate(n);
                Ok(Decision { actions, prompt: Some(prompt.full_text()) })
            }
            ParsedResponse::Remark(_) => unreachable!("standard prompts expect an action block"),
        }
    }

    fn reflect(&self, ctx: &ReflectContext<'_>) -> Result<Reflection, PolicyError> {
        let kind = ctx.task.env_kind;
        let prompt = self.render_reflection(ctx)?;
        match self.query(&prompt, kind, ctx.temperature)? {
            ParsedResponse::Remark(text) => Ok(Reflection::Text(text)),
            ParsedResponse::Actions(_) => unreachable!("reflection prompts expect a remark block"),
        }
    }

    fn reflection_prompt(&self, ctx: &ReflectContext<'_>) -> Option<String> {
        self.render_reflection(ctx).ok().map(|p| p.full_text())
    }
}
