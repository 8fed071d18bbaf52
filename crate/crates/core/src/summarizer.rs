//! Summarization backends.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::embedding::cache::{backend_dir_name, content_hash, write_atomic};
use crate::sidecar::{ModelKind, SidecarClient, SidecarError};
use crate::span::SummarizerInput;

#[derive(Debug, thiserror::Error)]
pub enum SummarizeError {
    #[error("nothing to summarize: span text is empty")]
    EmptyExtract,
    #[error("service returned an empty summary")]
    EmptySummary,
    #[error("invalid summarizer setting: {0}")]
    Config(String),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
    #[error("summary cache error: {0}")]
    Cache(#[from] std::io::Error),
}

impl SummarizeError {
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            SummarizeError::Sidecar(SidecarError::Transport { .. })
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryResult {
    pub summary: String,
    pub backend_name: String,
    pub input_truncated: bool,
}

pub trait Summarizer: Send + Sync {
    fn name(&self) -> &str;
    fn summarize(&self, input: &SummarizerInput) -> Result<SummaryResult, SummarizeError>;
}

/// Splits after each `.`, `!` or `?`; a trailing unterminated fragment is a
/// sentence too.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '!' | '?') {
            let end = i + c.len_utf8();
            if text[start..end].chars().any(char::is_alphanumeric) {
                ranges.push((start, end));
            } else if let Some(last) = ranges.last_mut() {
                // stray punctuation ("...", "! ?") belongs to the previous sentence
                last.1 = end;
            }
            start = end;
        }
    }
    if text[start..].chars().any(|c| !c.is_whitespace()) {
        ranges.push((start, text.len()));
    }
    ranges.into_iter().map(|(a, b)| text[a..b].trim()).collect()
}

/// Extractive baseline: the first `k` sentences of the span text.
#[derive(Debug, Clone)]
pub struct LeadK {
    k: usize,
    name: String,
}

impl LeadK {
    pub fn new(k: usize) -> Result<Self, SummarizeError> {
        if k == 0 {
            return Err(SummarizeError::Config("lead-k needs k >= 1".into()));
        }
        Ok(Self {
            k,
            name: format!("lead-{k}"),
        })
    }
}

impl Summarizer for LeadK {
    fn name(&self) -> &str {
        &self.name
    }

    fn summarize(&self, input: &SummarizerInput) -> Result<SummaryResult, SummarizeError> {
        let span = input.span_text();
        let sentences = split_sentences(span);
        if sentences.is_empty() {
            return Err(SummarizeError::EmptyExtract);
        }
        let summary = sentences
            .into_iter()
            .take(self.k)
            .collect::<Vec<_>>()
            .join(" ");
        Ok(SummaryResult {
            summary,
            backend_name: self.name.clone(),
            input_truncated: input.truncated,
        })
    }
}

#[derive(Deserialize)]
struct SummarizeResponse {
    summary: String,
    #[serde(default)]
    truncated: bool,
}

#[derive(Serialize, Deserialize)]
struct CachedSummary {
    summary: String,
    truncated: bool,
}

/// Sidecar seq2seq summarizer (`/summarize`) with an on-disk response cache.
pub struct RemoteSummarizer {
    client: SidecarClient,
    model: String,
    name: String,
    cache_dir: Option<PathBuf>,
}

impl RemoteSummarizer {
    pub fn connect(
        client: SidecarClient,
        model: &str,
        cache_root: Option<PathBuf>,
    ) -> Result<Self, SummarizeError> {
        client.health()?;
        client.find_model(model, ModelKind::Summarizer)?;
        let name = format!("remote:{model}");
        Ok(Self {
            cache_dir: cache_root.map(|r| r.join(backend_dir_name(&name))),
            client,
            model: model.to_string(),
            name,
        })
    }

    pub fn client(&self) -> &SidecarClient {
        &self.client
    }
}

impl Summarizer for RemoteSummarizer {
    fn name(&self) -> &str {
        &self.name
    }

    fn summarize(&self, input: &SummarizerInput) -> Result<SummaryResult, SummarizeError> {
        if input.span_text().trim().is_empty() {
            return Err(SummarizeError::EmptyExtract);
        }
        let cache_path = self
            .cache_dir
            .as_ref()
            .map(|d| d.join(format!("{}.json", content_hash(&input.text))));
        if let Some(path) = &cache_path {
            if let Ok(bytes) = std::fs::read(path) {
                if let Ok(c) = serde_json::from_slice::<CachedSummary>(&bytes) {
                    return Ok(SummaryResult {
                        summary: c.summary,
                        backend_name: self.name.clone(),
                        input_truncated: input.truncated || c.truncated,
                    });
                }
            }
        }
        let body = serde_json::json!({ "model": self.model, "text": input.text });
        let resp: SummarizeResponse =
            self.client.post("/summarize", &body).map_err(|e| match e {
                SidecarError::Status {
                    status: 404, body, ..
                } => SidecarError::Protocol(format!(
                    "summarizer {} unknown to service: {body}",
                    self.model
                )),
                other => other,
            })?;
        if resp.summary.trim().is_empty() {
            return Err(SummarizeError::EmptySummary);
        }
        if let Some(path) = &cache_path {
            let cached = CachedSummary {
                summary: resp.summary.clone(),
                truncated: resp.truncated,
            };
            write_atomic(path, &serde_json::to_vec(&cached).expect("serializable"))?;
        }
        Ok(SummaryResult {
            summary: resp.summary,
            backend_name: self.name.clone(),
            input_truncated: input.truncated || resp.truncated,
        })
    }
}
