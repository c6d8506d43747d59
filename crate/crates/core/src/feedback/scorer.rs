//! Query/evidence relevance scorers: a remote cross-encoder endpoint, an
//! offline lexical fallback, and replay/recording wrappers.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::llm::{RetryPolicy, Transport, UreqTransport};
use crate::text::tokenize;

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("scorer transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("invalid scorer response: {0}")]
    InvalidResponse(String),
    #[error("no recorded score for digest {digest}")]
    Missing { digest: String },
}

pub trait RelevanceScorer: Send + Sync {
    /// Relevance of `text` to `query` in `[0, 1]`.
    fn score(&self, query: &str, text: &str) -> Result<f64, ScorerError>;
}

impl<T: RelevanceScorer + ?Sized> RelevanceScorer for Arc<T> {
    fn score(&self, query: &str, text: &str) -> Result<f64, ScorerError> {
        (**self).score(query, text)
    }
}

/// Token-level F1 between the normalized token multisets.
pub fn lexical_fallback_score(query: &str, text: &str) -> f64 {
    let q = tokenize(query);
    let t = tokenize(text);
    if q.is_empty() || t.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in &t {
        *counts.entry(tok).or_default() += 1;
    }
    let mut overlap = 0usize;
    for tok in &q {
        if let Some(c) = counts.get_mut(tok.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / t.len() as f64;
    let recall = overlap as f64 / q.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl RelevanceScorer for LexicalScorer {
    fn score(&self, query: &str, text: &str) -> Result<f64, ScorerError> {
        Ok(lexical_fallback_score(query, text))
    }
}

fn check_score(v: f64) -> Result<f64, ScorerError> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(ScorerError::InvalidResponse(format!("score {v} outside [0, 1]")))
    }
}

/// Cross-encoder behind `POST {"query", "text"} -> {"score"}`.
pub struct RemoteScorer {
    endpoint: String,
    retry: RetryPolicy,
    transport: Arc<dyn Transport>,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>, transport: Arc<dyn Transport>) -> Self {
        Self {
            endpoint: endpoint.into(),
            retry: RetryPolicy::default(),
            transport,
        }
    }

    /// `SCORER_ENDPOINT`, if set.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var("SCORER_ENDPOINT").ok().filter(|s| !s.is_empty())?;
        Some(Self::new(endpoint, Arc::new(UreqTransport::default())))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl RelevanceScorer for RemoteScorer {
    fn score(&self, query: &str, text: &str) -> Result<f64, ScorerError> {
        let body = json!({"query": query, "text": text});
        let mut attempt = 0;
        loop {
            attempt += 1;
            let message = match self.transport.post_json(&self.endpoint, None, &body) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let v: serde_json::Value = serde_json::from_str(&reply.body)
                        .map_err(|e| ScorerError::InvalidResponse(e.to_string()))?;
                    let score = v
                        .get("score")
                        .and_then(serde_json::Value::as_f64)
                        .ok_or_else(|| ScorerError::InvalidResponse("missing \"score\"".into()))?;
                    return check_score(score);
                }
                Ok(reply) if reply.status < 500 && reply.status != 429 => {
                    return Err(ScorerError::InvalidResponse(format!("HTTP {}: {}", reply.status, reply.body)))
                }
                Ok(reply) => format!("HTTP {}", reply.status),
                Err(e) => e.0,
            };
            if attempt > self.retry.max_retries {
                return Err(ScorerError::Transport { attempts: attempt, message });
            }
            std::thread::sleep(self.retry.base_delay.saturating_mul(1 << (attempt - 1).min(16)));
        }
    }
}

pub fn score_digest(query: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"score\0");
    h.update(query.trim_end().as_bytes());
    h.update([0u8]);
    h.update(text.trim_end().as_bytes());
    hex::encode(h.finalize())
}

/// Recorded relevance scores keyed by [`score_digest`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreTranscript {
    pub entries: BTreeMap<String, f64>,
}

impl ScoreTranscript {
    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let raw = fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(std::io::Error::other)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        json.push('\n');
        fs::write(path, json)
    }

    pub fn insert(&mut self, query: &str, text: &str, score: f64) {
        self.entries.insert(score_digest(query, text), score);
    }
}

pub struct ReplayScorer {
    transcript: ScoreTranscript,
}

impl ReplayScorer {
    pub fn new(transcript: ScoreTranscript) -> Self {
        Self { transcript }
    }
}

impl RelevanceScorer for ReplayScorer {
    fn score(&self, query: &str, text: &str) -> Result<f64, ScorerError> {
        let digest = score_digest(query, text);
        match self.transcript.entries.get(&digest) {
            Some(&v) => check_score(v),
            None => Err(ScorerError::Missing { digest }),
        }
    }
}

pub struct RecordingScorer<S> {
    inner: S,
    recorded: Mutex<ScoreTranscript>,
}

impl<S: RelevanceScorer> RecordingScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            recorded: Mutex::new(ScoreTranscript::default()),
        }
    }

    pub fn transcript(&self) -> ScoreTranscript {
        self.recorded.lock().expect("recorder lock").clone()
    }
}

impl<S: RelevanceScorer> RelevanceScorer for RecordingScorer<S> {
    fn score(&self, query: &str, text: &str) -> Result<f64, ScorerError> {
        let v = self.inner.score(query, text)?;
        self.recorded.lock().expect("recorder lock").insert(query, text, v);
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRule {
    #[serde(default)]
    pub query_contains: Vec<String>,
    #[serde(default)]
    pub text_contains: Vec<String>,
    pub score: f64,
}

/// Keyword-rule scorer for scripted scenarios; first matching rule wins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleScorer {
    pub rules: Vec<ScoreRule>,
    #[serde(default)]
    pub default: Option<f64>,
}

impl RuleScorer {
    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let raw = fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(std::io::Error::other)
    }
}

impl RelevanceScorer for RuleScorer {
    fn score(&self, query: &str, text: &str) -> Result<f64, ScorerError> {
        let hit = self.rules.iter().find(|r| {
            r.query_contains.iter().all(|s| query.contains(s.as_str()))
                && r.text_contains.iter().all(|s| text.contains(s.as_str()))
        });
        match hit.map(|r| r.score).or(self.default) {
            Some(v) => check_score(v),
            None => Err(ScorerError::Missing {
                digest: score_digest(query, text),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{HttpReply, TransportError};
    use std::time::Duration;

    #[test]
    fn f1_examples() {
        assert_eq!(lexical_fallback_score("the rca dog", "The RCA dog"), 1.0);
        assert_eq!(lexical_fallback_score("a b", "c d"), 0.0);
        assert_eq!(lexical_fallback_score("a b", "b c"), 0.5);
        assert_eq!(lexical_fallback_score("", "b c"), 0.0);
    }

    #[test]
    fn f1_uses_multisets() {
        // q = {a, a, b}, t = {a, b, b}; overlap 2 -> P = R = 2/3
        let v = lexical_fallback_score("a a b", "a b b");
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    struct Scripted(Mutex<Vec<Result<HttpReply, TransportError>>>);

    impl Transport for Scripted {
        fn post_json(&self, _: &str, _: Option<&str>, body: &serde_json::Value) -> Result<HttpReply, TransportError> {
            assert!(body.get("query").is_some() && body.get("text").is_some());
            self.0.lock().unwrap().remove(0)
        }
    }

    fn remote(outcomes: Vec<Result<HttpReply, TransportError>>) -> RemoteScorer {
        RemoteScorer::new("http://scorer.test", Arc::new(Scripted(Mutex::new(outcomes)))).with_retry(RetryPolicy {
            max_retries: 2,
            base_delay: Duration::ZERO,
        })
    }

    #[test]
    fn remote_parses_and_retries() {
        let s = remote(vec![
            Ok(HttpReply { status: 503, body: String::new() }),
            Ok(HttpReply { status: 200, body: "{\"score\": 0.75}".into() }),
        ]);
        assert_eq!(s.score("q", "t").unwrap(), 0.75);
    }

    #[test]
    fn remote_rejects_out_of_range() {
        let s = remote(vec![Ok(HttpReply { status: 200, body: "{\"score\": 3.2}".into() })]);
        assert!(matches!(s.score("q", "t"), Err(ScorerError::InvalidResponse(_))));
    }

    #[test]
    fn remote_transport_error_propagates() {
        let s = remote(vec![
            Err(TransportError("down".into())),
            Err(TransportError("down".into())),
            Err(TransportError("down".into())),
        ]);
        assert!(matches!(s.score("q", "t"), Err(ScorerError::Transport { attempts: 3, .. })));
    }

    #[test]
    fn record_then_replay() {
        let rules = RuleScorer {
            rules: vec![ScoreRule {
                query_contains: vec![],
                text_contains: vec!["Nipper".into()],
                score: 0.9,
            }],
            default: Some(0.1),
        };
        let rec = RecordingScorer::new(rules);
        assert_eq!(rec.score("dog?", "Nipper was a dog").unwrap(), 0.9);
        assert_eq!(rec.score("dog?", "Bristol").unwrap(), 0.1);
        let replay = ReplayScorer::new(rec.transcript());
        assert_eq!(replay.score("dog?", "Nipper was a dog\n").unwrap(), 0.9);
        assert!(matches!(replay.score("dog?", "other"), Err(ScorerError::Missing { .. })));
    }
}
