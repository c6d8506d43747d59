//! Live chat-completion client over an injectable HTTP transport.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatModel, ChatRequest, ChatResponse, LlmError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Minimal blocking HTTP surface. Tests inject fakes; production uses
/// [`UreqTransport`].
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<HttpReply, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(120))
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<HttpReply, TransportError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = bearer {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on every further retry.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(16))
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || status >= 500
}

/// Chat-completion endpoint speaking the common `messages[]` schema.
pub struct LiveClient {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    retry: RetryPolicy,
    transport: Arc<dyn Transport>,
}

impl LiveClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, transport: Arc<dyn Transport>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            retry: RetryPolicy::default(),
            transport,
        }
    }

    /// Endpoint from `LLM_ENDPOINT`, key from `LLM_API_KEY` (optional).
    pub fn from_env(model: impl Into<String>) -> Result<Self, LlmError> {
        let endpoint = std::env::var("LLM_ENDPOINT").map_err(|_| LlmError::NotConfigured("LLM_ENDPOINT is not set".into()))?;
        let mut client = Self::new(endpoint, model, Arc::new(UreqTransport::default()));
        client.api_key = std::env::var("LLM_API_KEY").ok().filter(|k| !k.is_empty());
        Ok(client)
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn body(&self, request: &ChatRequest) -> Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }
}

fn parse_completion(body: &str) -> Result<ChatResponse, LlmError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| LlmError::InvalidResponse(format!("not JSON: {e}")))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| LlmError::InvalidResponse("missing choices[0]".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::InvalidResponse("missing choices[0].message.content".into()))?;
    let finish_reason = choice
        .get("finish_reason")
        .and_then(Value::as_str)
        .unwrap_or("stop")
        .to_string();
    Ok(ChatResponse {
        text: text.to_string(),
        finish_reason,
    })
}

impl ChatModel for LiveClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let body = self.body(request);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let outcome = self
                .transport
                .post_json(&self.endpoint, self.api_key.as_deref(), &body);
            let last_error = match outcome {
                Ok(reply) if (200..300).contains(&reply.status) => return parse_completion(&reply.body),
                Ok(reply) if !retryable(reply.status) => {
                    return Err(LlmError::Http {
                        status: reply.status,
                        body: reply.body,
                    })
                }
                Ok(reply) => LlmError::Http {
                    status: reply.status,
                    body: reply.body,
                },
                Err(e) => LlmError::Transport {
                    attempts: attempt,
                    message: e.0,
                },
            };
            if attempt > self.retry.max_retries {
                log::warn!("giving up on {} after {attempt} attempt(s)", self.endpoint);
                return Err(match last_error {
                    LlmError::Http { status, body } => LlmError::Transport {
                        attempts: attempt,
                        message: format!("HTTP {status}: {body}"),
                    },
                    other => other,
                });
            }
            let delay = self.retry.delay(attempt - 1);
            log::debug!("retrying {} in {delay:?} ({last_error})", self.endpoint);
            thread::sleep(delay);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::TemplateName;
    use std::sync::Mutex;

    /// Replays a fixed sequence of outcomes and records every call.
    struct FakeTransport {
        outcomes: Mutex<Vec<Result<HttpReply, TransportError>>>,
        calls: Mutex<Vec<Value>>,
    }

    impl FakeTransport {
        fn new(mut outcomes: Vec<Result<HttpReply, TransportError>>) -> Arc<Self> {
            outcomes.reverse();
            Arc::new(Self {
                outcomes: Mutex::new(outcomes),
                calls: Mutex::new(Vec::new()),
            })
        }
    }

    impl Transport for FakeTransport {
        fn post_json(&self, _url: &str, _bearer: Option<&str>, body: &Value) -> Result<HttpReply, TransportError> {
            self.calls.lock().unwrap().push(body.clone());
            self.outcomes
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Err(TransportError("no more outcomes".into())))
        }
    }

    fn ok(text: &str) -> Result<HttpReply, TransportError> {
        Ok(HttpReply {
            status: 200,
            body: json!({"choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]})
                .to_string(),
        })
    }

    fn status(code: u16) -> Result<HttpReply, TransportError> {
        Ok(HttpReply {
            status: code,
            body: "err".into(),
        })
    }

    fn fast(transport: Arc<FakeTransport>, retries: u32) -> LiveClient {
        LiveClient::new("http://llm.test/v1/chat/completions", "m", transport).with_retry(RetryPolicy {
            max_retries: retries,
            base_delay: Duration::ZERO,
        })
    }

    #[test]
    fn retries_once_after_500() {
        let t = FakeTransport::new(vec![status(500), ok("hello")]);
        let client = fast(t.clone(), 3);
        let resp = client.complete(&ChatRequest::new(TemplateName::Curate, "hi")).unwrap();
        assert_eq!(resp.text, "hello");
        assert_eq!(t.calls.lock().unwrap().len(), 2);
    }

    #[test]
    fn gives_up_after_limit() {
        let t = FakeTransport::new(vec![
            Err(TransportError("refused".into())),
            Err(TransportError("refused".into())),
            Err(TransportError("refused".into())),
        ]);
        let err = fast(t.clone(), 2)
            .complete(&ChatRequest::new(TemplateName::Curate, "hi"))
            .unwrap_err();
        assert!(matches!(err, LlmError::Transport { attempts: 3, .. }), "{err}");
        assert_eq!(t.calls.lock().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = FakeTransport::new(vec![status(401), ok("never")]);
        let err = fast(t.clone(), 3)
            .complete(&ChatRequest::new(TemplateName::Curate, "hi"))
            .unwrap_err();
        assert!(matches!(err, LlmError::Http { status: 401, .. }));
        assert_eq!(t.calls.lock().unwrap().len(), 1);
    }

    #[test]
    fn request_uses_chat_schema() {
        let t = FakeTransport::new(vec![ok("x")]);
        fast(t.clone(), 0)
            .complete(&ChatRequest::new(TemplateName::FinalAnswer, "question"))
            .unwrap();
        let body = &t.calls.lock().unwrap()[0];
        assert_eq!(body["model"], "m");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["messages"][1]["content"], "question");
        assert_eq!(body["max_tokens"], 512);
    }

    #[test]
    fn malformed_body_is_invalid_response() {
        let t = FakeTransport::new(vec![Ok(HttpReply {
            status: 200,
            body: "{}".into(),
        })]);
        let err = fast(t, 0)
            .complete(&ChatRequest::new(TemplateName::Curate, "hi"))
            .unwrap_err();
        assert!(matches!(err, LlmError::InvalidResponse(_)));
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(100),
        };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(400));
    }
}
