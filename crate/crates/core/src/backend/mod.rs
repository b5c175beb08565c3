//! Completion backends: live HTTP, fixture replay, recording, and scripted
//! offline agents.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::domain::UsageStats;

#[cfg(feature = "http")]
pub mod http;
pub mod factory;
mod record;
mod replay;
pub mod scripted;

pub use record::{FixtureWriter, RecordingBackend};
pub use factory::{RecordingFactory, ReplayFactory, ScriptedFactory};
pub use replay::{DigestReplayBackend, ReplayBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionParams {
    pub model_name: String,
    pub temperature: f64,
    /// Passed through to providers that understand it.
    pub thinking_budget: u32,
    pub max_output_tokens: Option<u32>,
    /// Logging only; never part of the request digest.
    pub seed_tag: String,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            model_name: "gemini-2.5-flash".into(),
            temperature: 0.7,
            thinking_budget: 0,
            max_output_tokens: None,
            seed_tag: String::new(),
        }
    }
}

impl CompletionParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidParams(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn with_seed_tag(mut self, tag: impl Into<String>) -> Self {
        self.seed_tag = tag.into();
        self
    }
}

/// Hex SHA-256 over the prompt and every parameter except `seed_tag`.
pub fn request_digest(prompt: &str, params: &CompletionParams) -> String {
    let canonical = json!({
        "prompt": prompt,
        "model": params.model_name,
        "temperature": params.temperature,
        "thinking_budget": params.thinking_budget,
        "max_output_tokens": params.max_output_tokens,
    });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: UsageStats,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected provider response: {0}")]
    Provider(String),
    #[error("fixture entry {index} digest mismatch (expected {expected}, got {actual})")]
    DigestMismatch { index: usize, expected: String, actual: String },
    #[error("fixture exhausted after {consumed} entries")]
    FixtureExhausted { consumed: usize },
    #[error("fixture not found: {0}")]
    FixtureNotFound(PathBuf),
    #[error("no recorded completion for request {0}")]
    UnrecordedRequest(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<Completion, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Arc<B> {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<Completion, BackendError> {
        (**self).complete(prompt, params)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<Completion, BackendError> {
        (**self).complete(prompt, params)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<Completion, BackendError> {
        (**self).complete(prompt, params)
    }
}

/// One recorded call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub digest: String,
    pub text: String,
    pub completion_tokens: u64,
    pub thought_tokens: u64,
    pub response_time: f64,
    /// Full prompt, only kept when recording with prompts enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl FixtureEntry {
    pub fn new(digest: String, completion: &Completion) -> Self {
        Self {
            digest,
            text: completion.text.clone(),
            completion_tokens: completion.usage.completion_tokens,
            thought_tokens: completion.usage.thought_tokens,
            response_time: completion.usage.response_time,
            prompt: None,
        }
    }

    pub fn completion(&self) -> Completion {
        Completion {
            text: self.text.clone(),
            usage: UsageStats {
                completion_tokens: self.completion_tokens,
                thought_tokens: self.thought_tokens,
                response_time: self.response_time,
            },
        }
    }
}

/// A per-session fixture: optional `{"meta": {...}}` first line, then one
/// entry per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fixture {
    pub meta: BTreeMap<String, Value>,
    pub entries: Vec<FixtureEntry>,
}

#[derive(Deserialize)]
struct MetaLine {
    meta: BTreeMap<String, Value>,
}

impl Fixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => BackendError::FixtureNotFound(path.to_path_buf()),
            _ => BackendError::Io(format!("{}: {e}", path.display())),
        })?;
        let mut fixture = Fixture::default();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |e: serde_json::Error| BackendError::Io(format!("{}:{}: {e}", path.display(), idx + 1));
            if idx == 0 && line.starts_with("{\"meta\"") {
                fixture.meta = serde_json::from_str::<MetaLine>(&line).map_err(bad)?.meta;
            } else {
                fixture.entries.push(serde_json::from_str(&line).map_err(bad)?);
            }
        }
        Ok(fixture)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if !self.meta.is_empty() {
            out.push_str(&meta_line(&self.meta));
            out.push('\n');
        }
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("fixture entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BackendError> {
        fs::write(path.as_ref(), self.to_jsonl()).map_err(|e| BackendError::Io(e.to_string()))
    }
}

fn meta_line(meta: &BTreeMap<String, Value>) -> String {
    serde_json::to_string(&json!({ "meta": meta })).expect("meta serializes")
}

/// File name used for a seed's transcript or fixture.
pub fn seed_file_name(seed: u64) -> String {
    format!("seed-{seed:03}.jsonl")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_seed_tag() {
        let a = CompletionParams::default();
        let b = a.clone().with_seed_tag("seed-7");
        assert_eq!(request_digest("hi", &a), request_digest("hi", &b));
        assert_ne!(request_digest("hi", &a), request_digest("hi ", &a));
        let hot = CompletionParams { temperature: 1.0, ..a.clone() };
        assert_ne!(request_digest("hi", &a), request_digest("hi", &hot));
        assert_eq!(request_digest("hi", &a).len(), 64);
    }

    #[test]
    fn defaults_and_bounds() {
        let p = CompletionParams::default();
        assert_eq!((p.temperature, p.thinking_budget), (0.7, 0));
        assert!(p.validate().is_ok());
        assert!(CompletionParams { temperature: 2.5, ..p.clone() }.validate().is_err());
        assert!(CompletionParams { temperature: -0.1, ..p }.validate().is_err());
    }

    #[test]
    fn fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        let fixture = Fixture {
            meta: BTreeMap::from([("seed".to_string(), json!(3))]),
            entries: vec![FixtureEntry::new(
                "ab".into(),
                &Completion {
                    text: "{\"x\":1}".into(),
                    usage: UsageStats { completion_tokens: 5, thought_tokens: 0, response_time: 0.1 + 0.2 },
                },
            )],
        };
        fixture.save(&path).unwrap();
        assert_eq!(Fixture::load(&path).unwrap(), fixture);
        assert!(matches!(
            Fixture::load(dir.path().join("missing.jsonl")),
            Err(BackendError::FixtureNotFound(_))
        ));
    }
}
