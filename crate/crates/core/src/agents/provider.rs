use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::json;

use crate::error::{Error, ProviderError, Result};
use crate::http::{join_url, JsonClient};
use crate::util::fnv1a64;

/// Chat-completion backend.
pub trait LlmProvider: Send + Sync {
    fn complete(&self, prompt: &str, temperature: f64, seed: u64) -> std::result::Result<String, ProviderError>;
}

impl<P: LlmProvider + ?Sized> LlmProvider for &P {
    fn complete(&self, prompt: &str, temperature: f64, seed: u64) -> std::result::Result<String, ProviderError> {
        (**self).complete(prompt, temperature, seed)
    }
}

/// Lookup key of a fixture reply: `"<fnv1a64(prompt) as 16 hex>:<seed>"`,
/// or `"<hash>:*"` for any seed.
pub fn fixture_key(prompt: &str, seed: Option<u64>) -> String {
    let h = fnv1a64(prompt.as_bytes());
    match seed {
        Some(s) => format!("{h:016x}:{s}"),
        None => format!("{h:016x}:*"),
    }
}

/// Canned replies keyed by prompt hash and seed hint. Lookup order: exact
/// seed, any-seed, then the global `"*"` default.
#[derive(Debug, Default)]
pub struct FixtureLlm {
    replies: BTreeMap<String, String>,
    calls: AtomicUsize,
}

impl FixtureLlm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let replies = serde_json::from_str(&text).map_err(|e| Error::parse(path, None, e))?;
        Ok(FixtureLlm {
            replies,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.replies).expect("fixture serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn insert(&mut self, prompt: &str, seed: Option<u64>, reply: impl Into<String>) {
        self.replies.insert(fixture_key(prompt, seed), reply.into());
    }

    pub fn set_default(&mut self, reply: impl Into<String>) {
        self.replies.insert("*".into(), reply.into());
    }

    pub fn merge(&mut self, other: FixtureLlm) {
        self.replies.extend(other.replies);
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl LlmProvider for FixtureLlm {
    fn complete(&self, prompt: &str, _temperature: f64, seed: u64) -> std::result::Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let exact = fixture_key(prompt, Some(seed));
        self.replies
            .get(&exact)
            .or_else(|| self.replies.get(&fixture_key(prompt, None)))
            .or_else(|| self.replies.get("*"))
            .cloned()
            .ok_or(ProviderError::MissingFixture(exact))
    }
}

/// OpenAI-compatible `/v1/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteLlm {
    url: String,
    model: String,
    client: JsonClient,
}

impl RemoteLlm {
    pub const API_KEY_ENV: &'static str = "RMD_LLM_API_KEY";
    pub const BASE_URL_ENV: &'static str = "RMD_LLM_BASE_URL";
    pub const MODEL_ENV: &'static str = "RMD_LLM_MODEL";

    pub fn new(base_url: &str, model: &str, api_key: Option<String>, timeout: Duration, max_retries: u32) -> Result<Self> {
        let client = JsonClient::new(api_key, timeout, max_retries).map_err(|e| Error::provider("llm client", e))?;
        Ok(RemoteLlm {
            url: join_url(base_url, "v1/chat/completions"),
            model: model.to_string(),
            client,
        })
    }

    #[cfg(test)]
    pub(crate) fn with_fast_backoff(mut self) -> Self {
        self.client = self.client.with_backoff(Duration::from_millis(1));
        self
    }
}

impl LlmProvider for RemoteLlm {
    fn complete(&self, prompt: &str, temperature: f64, _seed: u64) -> std::result::Result<String, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": temperature,
        });
        let resp = self.client.post(&self.url, &body)?;
        resp["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))
    }
}

/// One recorded provider call.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub prompt: String,
    pub temperature: f64,
    pub seed: u64,
}

/// Wrapper that logs every prompt sent to the inner provider.
pub struct RecordingLlm<P> {
    inner: P,
    log: Mutex<Vec<RecordedCall>>,
}

impl<P: LlmProvider> RecordingLlm<P> {
    pub fn new(inner: P) -> Self {
        RecordingLlm {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.log.lock().expect("call log poisoned").clone()
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: LlmProvider> LlmProvider for RecordingLlm<P> {
    fn complete(&self, prompt: &str, temperature: f64, seed: u64) -> std::result::Result<String, ProviderError> {
        self.log.lock().expect("call log poisoned").push(RecordedCall {
            prompt: prompt.to_string(),
            temperature,
            seed,
        });
        self.inner.complete(prompt, temperature, seed)
    }
}
