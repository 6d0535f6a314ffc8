use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, ProviderError, Result};
use crate::http::{join_url, JsonClient};
use crate::util::{fnv1a64, round_sig9};

pub const DEFAULT_EMBEDDING_DIM: usize = 512;

/// Unit-norm text embedding. Components are rounded to 9 significant digits
/// so that index files reproduce byte-for-byte.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    provider_tag: String,
}

impl EmbeddingVector {
    /// L2-normalize `raw` and tag it.
    pub fn from_raw(raw: &[f64], provider_tag: impl Into<String>) -> Result<Self> {
        let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("cannot normalize a zero or non-finite embedding"));
        }
        Ok(EmbeddingVector {
            values: raw.iter().map(|v| round_sig9(v / n)).collect(),
            provider_tag: provider_tag.into(),
        })
    }

    /// Wrap stored values; checks the unit-norm invariant.
    pub fn from_stored(values: Vec<f64>, provider_tag: impl Into<String>) -> Result<Self> {
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("stored embedding has norm {n}, expected 1")));
        }
        Ok(EmbeddingVector {
            values,
            provider_tag: provider_tag.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::invalid(format!(
                "embedding dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }
}

/// Text encoder backend.
pub trait EmbeddingProvider: Send + Sync {
    fn tag(&self) -> &str;
    fn dim(&self) -> usize;
    /// Raw (not necessarily normalized) vectors, one per input text.
    fn embed(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, ProviderError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn tag(&self) -> &str {
        (**self).tag()
    }

    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, ProviderError> {
        (**self).embed(texts)
    }
}

/// Embed a single text, retrying up to `max_retries` times.
pub fn embed_text(provider: &dyn EmbeddingProvider, text: &str, max_retries: usize) -> Result<EmbeddingVector> {
    let input = [text.to_string()];
    let mut attempt = 0;
    loop {
        match provider.embed(&input) {
            Ok(mut v) if v.len() == 1 => {
                let raw = v.pop().expect("one vector");
                if raw.len() != provider.dim() {
                    return Err(Error::provider(
                        format!("embedding {text:?}"),
                        ProviderError::Malformed(format!("got dim {}, expected {}", raw.len(), provider.dim())),
                    ));
                }
                return EmbeddingVector::from_raw(&raw, provider.tag());
            }
            Ok(v) => {
                return Err(Error::provider(
                    format!("embedding {text:?}"),
                    ProviderError::Malformed(format!("{} vectors for 1 input", v.len())),
                ))
            }
            Err(e) if attempt < max_retries => {
                log::warn!("embedding {text:?} failed ({e}), retrying");
                attempt += 1;
            }
            Err(e) => return Err(Error::provider(format!("embedding {text:?}"), e)),
        }
    }
}

/// Deterministic bag-of-tokens encoder: lowercase, split on whitespace, hash
/// each token with 64-bit FNV-1a and add 1 to bucket `hash % dim`.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dim: usize,
    tag: String,
}

impl StubEmbedder {
    pub fn new(dim: usize) -> Self {
        StubEmbedder {
            dim,
            tag: format!("stub-fnv1a-{dim}"),
        }
    }

    pub fn raw(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in text.to_lowercase().split_whitespace() {
            v[(fnv1a64(token.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        v
    }
}

impl Default for StubEmbedder {
    fn default() -> Self {
        StubEmbedder::new(DEFAULT_EMBEDDING_DIM)
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                if t.split_whitespace().next().is_none() {
                    Err(ProviderError::Other("cannot embed empty text".into()))
                } else {
                    Ok(self.raw(t))
                }
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TableFile {
    provider_tag: String,
    dim: usize,
    table: BTreeMap<String, Vec<f64>>,
}

/// Precomputed embeddings looked up by exact text.
#[derive(Debug, Clone)]
pub struct TableEmbedder {
    tag: String,
    dim: usize,
    table: BTreeMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn new(tag: impl Into<String>, dim: usize) -> Self {
        TableEmbedder {
            tag: tag.into(),
            dim,
            table: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::invalid(format!("vector has dim {}, table dim {}", vector.len(), self.dim)));
        }
        self.table.insert(text.into(), vector);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = TableFile {
            provider_tag: self.tag.clone(),
            dim: self.dim,
            table: self.table.clone(),
        };
        let text = serde_json::to_string(&file).expect("table serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TableFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, None, e))?;
        if let Some((k, _)) = file.table.iter().find(|(_, v)| v.len() != file.dim) {
            return Err(Error::parse(path, None, format!("entry {k:?} has wrong dimension")));
        }
        Ok(TableEmbedder {
            tag: file.provider_tag,
            dim: file.dim,
            table: file.table,
        })
    }
}

impl EmbeddingProvider for TableEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .ok_or_else(|| ProviderError::MissingFixture(format!("embedding for {t:?}")))
            })
            .collect()
    }
}

/// OpenAI-compatible `/v1/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    url: String,
    model: String,
    dim: usize,
    tag: String,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub const API_KEY_ENV: &'static str = "RMD_EMBED_API_KEY";

    pub fn new(base_url: &str, model: &str, dim: usize, api_key: Option<String>, max_retries: u32) -> Result<Self> {
        let client = JsonClient::new(api_key, Duration::from_secs(60), max_retries)
            .map_err(|e| Error::provider("embedding client", e))?;
        Ok(RemoteEmbedder {
            url: join_url(base_url, "v1/embeddings"),
            model: model.to_string(),
            dim,
            tag: format!("remote:{model}"),
            client,
        })
    }

    #[cfg(test)]
    pub(crate) fn with_fast_backoff(mut self) -> Self {
        self.client = self.client.with_backoff(Duration::from_millis(1));
        self
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, ProviderError> {
        let body = json!({ "model": self.model, "input": texts });
        let resp = self.client.post(&self.url, &body)?;
        let data = resp["data"]
            .as_array()
            .ok_or_else(|| ProviderError::Malformed("missing data array".into()))?;
        if data.len() != texts.len() {
            return Err(ProviderError::Malformed(format!(
                "{} embeddings for {} inputs",
                data.len(),
                texts.len()
            )));
        }
        data.iter()
            .map(|d| {
                d["embedding"]
                    .as_array()
                    .and_then(|a| a.iter().map(|x| x.as_f64()).collect::<Option<Vec<f64>>>())
                    .ok_or_else(|| ProviderError::Malformed("embedding is not a number array".into()))
            })
            .collect()
    }
}

/// Wrapper that counts `embed` calls.
pub struct CountingEmbedder<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: EmbeddingProvider> CountingEmbedder<P> {
    pub fn new(inner: P) -> Self {
        CountingEmbedder {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CountingEmbedder<P> {
    fn tag(&self) -> &str {
        self.inner.tag()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(texts)
    }
}
