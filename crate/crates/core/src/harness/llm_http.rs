//! Blocking client for OpenAI-compatible `/chat/completions` endpoints.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use crate::policy::llm::{CompletionClient, CompletionRequest, LlmPolicy, TransportError};

use super::config::LlmConfig;

#[derive(Debug)]
pub struct HttpClient {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    retries: usize,
    backoff: Duration,
    slots: Semaphore,
}

impl HttpClient {
    /// Builds a client from `config`, reading the API key from the
    /// environment variable it names.
    pub fn from_config(config: &LlmConfig) -> Result<Self, TransportError> {
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            Some(std::env::var(&config.api_key_env).map_err(|_| TransportError {
                attempts: 0,
                message: format!("environment variable {} is not set", config.api_key_env),
            })?)
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpClient {
            agent,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            api_key,
            retries: config.retries,
            backoff: Duration::from_millis(500),
            slots: Semaphore::new(config.max_concurrency.max(1)),
        })
    }

    /// Initial delay between retries; doubles after each failure.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, body: &Value) -> Result<String, (bool, String)> {
        let mut request = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(|e| (true, e.to_string()))?;
        let status = response.status().as_u16();
        if status != 200 {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            let retryable = status == 429 || status >= 500;
            return Err((retryable, format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let value: Value = response.body_mut().read_json().map_err(|e| (true, e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| (false, "response has no choices[0].message.content".to_string()))
    }
}

impl CompletionClient for HttpClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if !request.stop.is_empty() {
            body["stop"] = json!(request.stop);
        }
        let _slot = self.slots.acquire();
        let mut delay = self.backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retryable, message)) => {
                    if !retryable || attempts > self.retries {
                        return Err(TransportError { attempts, message });
                    }
                }
            }
            thread::sleep(delay);
            delay *= 2;
        }
    }
}

/// An [`LlmPolicy`] over HTTP configured from `config`.
pub fn http_policy(config: &LlmConfig) -> Result<LlmPolicy<HttpClient>, TransportError> {
    let mut policy = LlmPolicy::new(HttpClient::from_config(config)?);
    policy.max_tokens = config.max_tokens;
    policy.malformed_retries = config.malformed_retries;
    policy.actions_per_turn = config.actions_per_turn;
    Ok(policy)
}

#[derive(Debug)]
struct Semaphore {
    free: Mutex<usize>,
    ready: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore { free: Mutex::new(n), ready: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.ready.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.ready.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn semaphore_bounds_concurrency() {
        let sem = Arc::new(Semaphore::new(2));
        let (live, peak) = (Arc::new(AtomicUsize::new(0)), Arc::new(AtomicUsize::new(0)));
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let (sem, live, peak) = (sem.clone(), live.clone(), peak.clone());
                thread::spawn(move || {
                    let _p = sem.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(10));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn missing_key_variable_is_reported() {
        let config = LlmConfig { api_key_env: "TRIALRL_TEST_UNSET_KEY_VARIABLE".into(), ..LlmConfig::default() };
        let e = HttpClient::from_config(&config).unwrap_err();
        assert!(e.message.contains("TRIALRL_TEST_UNSET_KEY_VARIABLE"));
    }
}
