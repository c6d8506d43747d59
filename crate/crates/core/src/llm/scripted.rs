//! Offline clients: transcript replay, transcript recording and a
//! keyword-rule responder used to author fixtures.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatModel, ChatRequest, ChatResponse, LlmError, TemplateName};

/// Stable key for a request: SHA-256 over the template name and the rendered
/// user text with trailing whitespace removed.
pub fn digest(template: TemplateName, user: &str) -> String {
    let mut h = Sha256::new();
    h.update(template.as_str().as_bytes());
    h.update([0u8]);
    h.update(user.trim_end().as_bytes());
    hex::encode(h.finalize())
}

/// Recorded prompt → response map, serialized as a flat JSON object keyed
/// by [`digest`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    pub entries: BTreeMap<String, String>,
}

impl Transcript {
    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let raw = fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(std::io::Error::other)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        json.push('\n');
        fs::write(path, json)
    }

    pub fn get(&self, template: TemplateName, user: &str) -> Option<&str> {
        self.entries.get(&digest(template, user)).map(String::as_str)
    }

    pub fn insert(&mut self, template: TemplateName, user: &str, response: impl Into<String>) {
        self.entries.insert(digest(template, user), response.into());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Answers from a transcript. In strict mode a miss is a
/// [`LlmError::Determinism`]; otherwise misses go to the fallthrough client
/// when one is configured.
pub struct ReplayClient {
    transcript: Transcript,
    strict: bool,
    fallthrough: Option<Arc<dyn ChatModel>>,
}

impl ReplayClient {
    pub fn strict(transcript: Transcript) -> Self {
        Self {
            transcript,
            strict: true,
            fallthrough: None,
        }
    }

    pub fn with_fallthrough(transcript: Transcript, fallthrough: Arc<dyn ChatModel>) -> Self {
        Self {
            transcript,
            strict: false,
            fallthrough: Some(fallthrough),
        }
    }

    /// Keep the fallthrough wired but never use it.
    pub fn make_strict(mut self) -> Self {
        self.strict = true;
        self
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }
}

impl ChatModel for ReplayClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        if request.temperature != 0.0 {
            return Err(LlmError::NonZeroTemperature(request.temperature));
        }
        if let Some(text) = self.transcript.get(request.template, &request.user) {
            return Ok(ChatResponse {
                text: text.to_string(),
                finish_reason: "stop".into(),
            });
        }
        match &self.fallthrough {
            Some(inner) if !self.strict => inner.complete(request),
            _ => Err(LlmError::Determinism {
                digest: digest(request.template, &request.user),
                template: request.template.to_string(),
                prompt: request.user.clone(),
            }),
        }
    }
}

/// Wraps another client and keeps every successful exchange.
pub struct RecordingClient<M> {
    inner: M,
    recorded: Mutex<Transcript>,
}

impl<M: ChatModel> RecordingClient<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            recorded: Mutex::new(Transcript::default()),
        }
    }

    pub fn transcript(&self) -> Transcript {
        self.recorded.lock().expect("recorder lock").clone()
    }
}

impl<M: ChatModel> ChatModel for RecordingClient<M> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let resp = self.inner.complete(request)?;
        self.recorded
            .lock()
            .expect("recorder lock")
            .insert(request.template, &request.user, resp.text.clone());
        Ok(resp)
    }
}

/// One keyword rule: fires when the rendered prompt contains every string in
/// `contains` and none in `absent`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<TemplateName>,
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub absent: Vec<String>,
    pub response: String,
}

impl Rule {
    pub fn new(template: TemplateName, contains: &[&str], response: impl Into<String>) -> Self {
        Self {
            template: Some(template),
            contains: contains.iter().map(|s| s.to_string()).collect(),
            absent: Vec::new(),
            response: response.into(),
        }
    }

    pub fn unless(mut self, absent: &[&str]) -> Self {
        self.absent = absent.iter().map(|s| s.to_string()).collect();
        self
    }

    fn matches(&self, request: &ChatRequest) -> bool {
        self.template.is_none_or(|t| t == request.template)
            && self.contains.iter().all(|s| request.user.contains(s.as_str()))
            && !self.absent.iter().any(|s| request.user.contains(s.as_str()))
    }
}

/// Deterministic stand-in model: first matching rule wins, no match is an
/// error. Useful for authoring transcripts and for tests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleClient {
    pub rules: Vec<Rule>,
}

impl RuleClient {
    pub fn new(rules: Vec<Rule>) -> Self {
        Self { rules }
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let raw = fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(std::io::Error::other)
    }
}

impl ChatModel for RuleClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.rules
            .iter()
            .find(|r| r.matches(request))
            .map(|r| ChatResponse {
                text: r.response.clone(),
                finish_reason: "stop".into(),
            })
            .ok_or_else(|| LlmError::Determinism {
                digest: digest(request.template, &request.user),
                template: request.template.to_string(),
                prompt: request.user.clone(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{HttpReply, LiveClient, Transport, TransportError};
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn digest_ignores_trailing_whitespace() {
        let a = digest(TemplateName::Curate, "prompt body");
        assert_eq!(a, digest(TemplateName::Curate, "prompt body \n\n"));
        assert_ne!(a, digest(TemplateName::FinalAnswer, "prompt body"));
        assert_ne!(a, digest(TemplateName::Curate, " prompt body"));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn replay_hit_and_strict_miss() {
        let mut t = Transcript::default();
        t.insert(TemplateName::Curate, "known", "canned");
        let client = ReplayClient::strict(t);
        let hit = client.complete(&ChatRequest::new(TemplateName::Curate, "known\n")).unwrap();
        assert_eq!(hit.text, "canned");
        let miss = client
            .complete(&ChatRequest::new(TemplateName::Curate, "unknown"))
            .unwrap_err();
        match miss {
            LlmError::Determinism { digest: d, prompt, .. } => {
                assert_eq!(d, digest(TemplateName::Curate, "unknown"));
                assert_eq!(prompt, "unknown");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn replay_rejects_sampling() {
        let client = ReplayClient::strict(Transcript::default());
        let mut req = ChatRequest::new(TemplateName::Curate, "x");
        req.temperature = 0.7;
        assert!(matches!(client.complete(&req), Err(LlmError::NonZeroTemperature(_))));
    }

    struct CountingTransport(AtomicUsize);

    impl Transport for CountingTransport {
        fn post_json(&self, _: &str, _: Option<&str>, _: &serde_json::Value) -> Result<HttpReply, TransportError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(TransportError("offline".into()))
        }
    }

    #[test]
    fn strict_replay_never_touches_fallthrough_transport() {
        let transport = Arc::new(CountingTransport(AtomicUsize::new(0)));
        let live = Arc::new(LiveClient::new("http://unused", "m", transport.clone()));
        let mut t = Transcript::default();
        t.insert(TemplateName::Curate, "known", "canned");
        let client = ReplayClient::with_fallthrough(t, live).make_strict();
        client.complete(&ChatRequest::new(TemplateName::Curate, "known")).unwrap();
        assert!(client.complete(&ChatRequest::new(TemplateName::Curate, "other")).is_err());
        assert_eq!(transport.0.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn recording_captures_rule_responses() {
        let rules = RuleClient::new(vec![
            Rule::new(TemplateName::Curate, &["dog"], "about a dog").unless(&["cat"]),
            Rule::new(TemplateName::Curate, &[], "fallback"),
        ]);
        let rec = RecordingClient::new(rules);
        assert_eq!(rec.complete(&ChatRequest::new(TemplateName::Curate, "a dog")).unwrap().text, "about a dog");
        assert_eq!(rec.complete(&ChatRequest::new(TemplateName::Curate, "dog and cat")).unwrap().text, "fallback");
        assert!(rec.complete(&ChatRequest::new(TemplateName::FinalAnswer, "a dog")).is_err());

        let replay = ReplayClient::strict(rec.transcript());
        assert_eq!(replay.transcript().len(), 2);
        assert_eq!(
            replay.complete(&ChatRequest::new(TemplateName::Curate, "a dog")).unwrap().text,
            "about a dog"
        );
    }

    #[test]
    fn transcript_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let mut t = Transcript::default();
        t.insert(TemplateName::FinalAnswer, "q", "So the answer is Nipper.");
        t.save(&path).unwrap();
        let raw = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&raw).unwrap();
        assert!(v.is_object());
        assert_eq!(Transcript::load(&path).unwrap(), t);
    }
}
