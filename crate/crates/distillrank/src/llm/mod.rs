//! LLM access: a chat-completion client trait, an HTTP implementation with
//! retry/backoff, and a deterministic mock oracle for offline runs.

mod http;
mod mock;

pub use http::{ChatTransport, HttpChatClient, TransportReply};
pub use mock::{detect_prompt_kind, MockOracle, MockOracleConfig};

use std::time::Duration;

/// A black-box text completion endpoint. One prompt in, one assistant
/// message out.
pub trait ChatClient: Send + Sync {
    /// Complete a single-turn prompt at the given sampling temperature.
    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, LlmError>;

    fn model_name(&self) -> &str;

    /// Wall-clock seconds used to stamp generated records. The mock oracle
    /// pins this to zero so outputs are byte-identical across runs.
    fn timestamp(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// Connection settings for a remote chat-completion endpoint.
#[derive(Debug, Clone)]
pub struct LlmEndpoint {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub request_timeout: Duration,
    pub max_retries: u32,
    pub sampling_temperature: f64,
    /// First backoff delay; doubles per retry, with jitter.
    pub backoff_base: Duration,
}

impl Default for LlmEndpoint {
    fn default() -> Self {
        LlmEndpoint {
            base_url: "https://api.openai.com/v1".to_string(),
            model_name: "gpt-4o-mini".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            request_timeout: Duration::from_secs(60),
            max_retries: 3,
            sampling_temperature: 0.7,
            backoff_base: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("environment variable {0} is not set (required for the remote endpoint)")]
    MissingApiKey(String),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("endpoint returned an empty completion")]
    EmptyCompletion,

    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },

    #[error("completion response missing assistant message: {0}")]
    BadResponse(String),

    #[error("mock oracle: {0}")]
    Mock(String),
}
