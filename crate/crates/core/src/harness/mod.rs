//! Configuration, command line and persistence.

pub mod cli;
pub mod config;
pub mod llm_http;

pub use config::{Backend, ConfigError, EvalConfig, LlmConfig, RunConfig};
