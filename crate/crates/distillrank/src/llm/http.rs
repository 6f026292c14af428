//! HTTP chat-completion client with exponential backoff.
//!
//! The wire format is the ubiquitous chat-completions shape: POST with
//! `model`, `messages` (a single user turn) and `temperature`, bearer token
//! from the environment. Transport is behind a trait so the retry logic is
//! testable with scripted replies.

use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde_json::json;

use super::{ChatClient, LlmEndpoint, LlmError};

/// Outcome of one transport attempt. Connection-level failures are `Err` on
/// the transport call itself.
#[derive(Debug, Clone)]
pub enum TransportReply {
    /// Raw response body with its HTTP status.
    Response { status: u16, body: String },
}

pub trait ChatTransport: Send + Sync {
    fn send(
        &self,
        url: &str,
        api_key: &str,
        payload: &serde_json::Value,
        timeout: Duration,
    ) -> Result<TransportReply, String>;
}

struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ChatTransport for ReqwestTransport {
    fn send(
        &self,
        url: &str,
        api_key: &str,
        payload: &serde_json::Value,
        timeout: Duration,
    ) -> Result<TransportReply, String> {
        let response = self
            .client
            .post(url)
            .bearer_auth(api_key)
            .json(payload)
            .timeout(timeout)
            .send()
            .map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| e.to_string())?;
        Ok(TransportReply::Response { status, body })
    }
}

pub struct HttpChatClient {
    endpoint: LlmEndpoint,
    transport: Box<dyn ChatTransport>,
    jitter_rng: Mutex<ChaCha12Rng>,
    sleep: fn(Duration),
}

impl HttpChatClient {
    pub fn new(endpoint: LlmEndpoint) -> Self {
        let client = reqwest::blocking::Client::new();
        Self::with_transport(endpoint, Box::new(ReqwestTransport { client }))
    }

    pub fn with_transport(endpoint: LlmEndpoint, transport: Box<dyn ChatTransport>) -> Self {
        HttpChatClient {
            endpoint,
            transport,
            jitter_rng: Mutex::new(ChaCha12Rng::seed_from_u64(0)),
            sleep: std::thread::sleep,
        }
    }

    /// Test hook: replace the real sleep so backoff contracts run instantly.
    #[doc(hidden)]
    pub fn with_sleep(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    fn completions_url(&self) -> String {
        let base = self.endpoint.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn backoff_delay(&self, attempt: u32) -> Duration {
        let base = self.endpoint.backoff_base.as_secs_f64() * f64::from(1u32 << attempt.min(16));
        let jitter = self.jitter_rng.lock().unwrap().gen_range(0.0..0.5) * base;
        Duration::from_secs_f64(base + jitter)
    }

    fn extract_message(body: &str) -> Result<String, LlmError> {
        let value: serde_json::Value =
            serde_json::from_str(body).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let content = value
            .get("choices")
            .and_then(|c| c.get(0))
            .and_then(|c| c.get("message"))
            .and_then(|m| m.get("content"))
            .and_then(|c| c.as_str())
            .ok_or_else(|| LlmError::BadResponse("no choices[0].message.content".to_string()))?;
        if content.trim().is_empty() {
            return Err(LlmError::EmptyCompletion);
        }
        Ok(content.to_string())
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, LlmError> {
        let api_key = std::env::var(&self.endpoint.api_key_env)
            .map_err(|_| LlmError::MissingApiKey(self.endpoint.api_key_env.clone()))?;
        let payload = json!({
            "model": self.endpoint.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        });
        let url = self.completions_url();

        let mut attempt = 0u32;
        loop {
            let last_failure;
            let outcome = self
                .transport
                .send(&url, &api_key, &payload, self.endpoint.request_timeout);
            match outcome {
                Ok(TransportReply::Response { status, body }) if status < 300 => {
                    return Self::extract_message(&body);
                }
                Ok(TransportReply::Response { status, body }) => {
                    let retryable = status == 429 || status >= 500;
                    if !retryable {
                        return Err(LlmError::Http { status, body });
                    }
                    last_failure = format!("HTTP {status}");
                }
                Err(message) => last_failure = format!("transport failure: {message}"),
            }
            if attempt >= self.endpoint.max_retries {
                return Err(LlmError::RetriesExhausted {
                    attempts: attempt + 1,
                    last: last_failure,
                });
            }
            (self.sleep)(self.backoff_delay(attempt));
            attempt += 1;
        }
    }

    fn model_name(&self) -> &str {
        &self.endpoint.model_name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Scripted {
        replies: Vec<Result<TransportReply, String>>,
        cursor: AtomicUsize,
    }

    impl Scripted {
        fn new(replies: Vec<Result<TransportReply, String>>) -> Arc<Self> {
            Arc::new(Scripted {
                replies,
                cursor: AtomicUsize::new(0),
            })
        }

        fn calls(&self) -> usize {
            self.cursor.load(Ordering::SeqCst)
        }
    }

    impl ChatTransport for Arc<Scripted> {
        fn send(
            &self,
            _url: &str,
            _api_key: &str,
            _payload: &serde_json::Value,
            _timeout: Duration,
        ) -> Result<TransportReply, String> {
            let i = self.cursor.fetch_add(1, Ordering::SeqCst);
            self.replies[i.min(self.replies.len() - 1)].clone()
        }
    }

    fn ok_body(text: &str) -> TransportReply {
        TransportReply::Response {
            status: 200,
            body: format!(
                "{{\"choices\":[{{\"message\":{{\"role\":\"assistant\",\"content\":\"{text}\"}}}}]}}"
            ),
        }
    }

    fn endpoint() -> LlmEndpoint {
        LlmEndpoint {
            api_key_env: "DISTILLRANK_TEST_KEY".to_string(),
            backoff_base: Duration::from_millis(1),
            max_retries: 3,
            ..LlmEndpoint::default()
        }
    }

    fn client(replies: Vec<Result<TransportReply, String>>) -> HttpChatClient {
        std::env::set_var("DISTILLRANK_TEST_KEY", "k");
        HttpChatClient::with_transport(endpoint(), Box::new(Scripted::new(replies)))
            .with_sleep(|_| {})
    }

    #[test]
    fn success_returns_message_text() {
        let c = client(vec![Ok(ok_body("OK"))]);
        assert_eq!(c.complete("hi", 0.7).unwrap(), "OK");
    }

    #[test]
    fn two_rate_limits_then_success() {
        let replies = vec![
            Ok(TransportReply::Response {
                status: 429,
                body: "slow down".into(),
            }),
            Ok(TransportReply::Response {
                status: 429,
                body: "slow down".into(),
            }),
            Ok(ok_body("fine")),
        ];
        let c = client(replies);
        assert_eq!(c.complete("hi", 0.7).unwrap(), "fine");
    }

    #[test]
    fn unauthorized_is_not_retried() {
        let scripted = Scripted::new(vec![Ok(TransportReply::Response {
            status: 401,
            body: "unauthorized".into(),
        })]);
        std::env::set_var("DISTILLRANK_TEST_KEY", "k");
        let c = HttpChatClient::with_transport(endpoint(), Box::new(scripted)).with_sleep(|_| {});
        let err = c.complete("hi", 0.7).unwrap_err();
        assert!(matches!(err, LlmError::Http { status: 401, .. }));
    }

    #[test]
    fn retries_are_exhausted_after_max_attempts() {
        let scripted = Scripted::new(vec![Err("connection reset".to_string())]);
        std::env::set_var("DISTILLRANK_TEST_KEY", "k");
        let c = HttpChatClient::with_transport(endpoint(), Box::new(scripted.clone()))
            .with_sleep(|_| {});
        let err = c.complete("hi", 0.7).unwrap_err();
        assert!(matches!(err, LlmError::RetriesExhausted { attempts: 4, .. }), "{err}");
        // max_retries = 3 means 1 initial + 3 retries
        assert_eq!(scripted.calls(), 4);
    }

    #[test]
    fn empty_completion_is_an_error() {
        let c = client(vec![Ok(ok_body("  "))]);
        assert!(matches!(c.complete("hi", 0.7).unwrap_err(), LlmError::EmptyCompletion));
    }

    #[test]
    fn missing_api_key_fails_before_any_request() {
        std::env::remove_var("DISTILLRANK_NO_SUCH_KEY");
        let mut e = endpoint();
        e.api_key_env = "DISTILLRANK_NO_SUCH_KEY".to_string();
        let c = HttpChatClient::with_transport(e, Box::new(Scripted::new(vec![Ok(ok_body("x"))])));
        assert!(matches!(
            c.complete("hi", 0.7).unwrap_err(),
            LlmError::MissingApiKey(_)
        ));
    }
}
