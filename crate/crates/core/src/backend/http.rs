//! Live completion over HTTP, with one small adapter per provider wire format.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, Completion, CompletionBackend, CompletionParams};
use crate::domain::UsageStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    /// `/chat/completions`-style APIs.
    OpenAi,
    /// `generateContent`-style APIs.
    Gemini,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub provider: Provider,
    /// Full request URL; `{model}` is replaced by the model name.
    pub endpoint: String,
    /// Environment variable holding the API key. Empty means no auth header.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            provider: Provider::Gemini,
            endpoint: "https://generativelanguage.googleapis.com/v1beta/models/{model}:generateContent".into(),
            api_key_env: "GEMINI_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 2,
            backoff_ms: 500,
        }
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    config: HttpConfig,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            Some(std::env::var(&config.api_key_env).map_err(|_| {
                BackendError::Config(format!("environment variable {} is not set", config.api_key_env))
            })?)
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { client, config, api_key })
    }

    fn request_body(&self, prompt: &str, params: &CompletionParams) -> Value {
        match self.config.provider {
            Provider::OpenAi => {
                let mut body = json!({
                    "model": params.model_name,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": params.temperature,
                });
                if let Some(max) = params.max_output_tokens {
                    body["max_tokens"] = json!(max);
                }
                body
            }
            Provider::Gemini => {
                let mut generation = json!({
                    "temperature": params.temperature,
                    "thinkingConfig": {"thinkingBudget": params.thinking_budget},
                });
                if let Some(max) = params.max_output_tokens {
                    generation["maxOutputTokens"] = json!(max);
                }
                json!({
                    "contents": [{"role": "user", "parts": [{"text": prompt}]}],
                    "generationConfig": generation,
                })
            }
        }
    }

    fn send_once(&self, url: &str, body: &Value) -> Result<Value, BackendError> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = match self.config.provider {
                Provider::OpenAi => req.bearer_auth(key),
                Provider::Gemini => req.header("x-goog-api-key", key),
            };
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Http { status: status.as_u16(), body: text });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Provider(e.to_string()))
    }
}

fn transient(err: &BackendError) -> bool {
    match err {
        BackendError::Timeout | BackendError::Transport(_) => true,
        BackendError::Http { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

/// Maps a provider response body to text and token counts.
pub fn parse_provider_response(provider: Provider, body: &Value) -> Result<(String, u64, u64), BackendError> {
    let missing = |what: &str| BackendError::Provider(format!("missing {what}"));
    match provider {
        Provider::OpenAi => {
            let text = body
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .ok_or_else(|| missing("choices[0].message.content"))?;
            let completion = body.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0);
            let thoughts = body
                .pointer("/usage/completion_tokens_details/reasoning_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0);
            Ok((text.to_string(), completion, thoughts))
        }
        Provider::Gemini => {
            let parts = body
                .pointer("/candidates/0/content/parts")
                .and_then(Value::as_array)
                .ok_or_else(|| missing("candidates[0].content.parts"))?;
            // thought summaries, when present, are flagged and excluded
            let text: String = parts
                .iter()
                .filter(|p| !p.get("thought").and_then(Value::as_bool).unwrap_or(false))
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect();
            let usage = body.get("usageMetadata");
            let count = |k: &str| usage.and_then(|u| u.get(k)).and_then(Value::as_u64).unwrap_or(0);
            Ok((text, count("candidatesTokenCount"), count("thoughtsTokenCount")))
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<Completion, BackendError> {
        params.validate()?;
        let url = self.config.endpoint.replace("{model}", &params.model_name);
        let body = self.request_body(prompt, params);
        let started = Instant::now();
        let mut attempt = 0;
        let value = loop {
            match self.send_once(&url, &body) {
                Ok(v) => break v,
                Err(e) if attempt < self.config.max_retries && transient(&e) => {
                    tracing::warn!(seed = %params.seed_tag, attempt, error = %e, "retrying completion");
                    std::thread::sleep(Duration::from_millis(self.config.backoff_ms << attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        let (text, completion_tokens, thought_tokens) = parse_provider_response(self.config.provider, &value)?;
        Ok(Completion {
            text,
            usage: UsageStats {
                completion_tokens,
                thought_tokens,
                response_time: started.elapsed().as_secs_f64(),
            },
        })
    }
}
