//! Blocking JSON client for the model sidecar service.
//!
//! Wire protocol:
//!
//! * `GET /health` → `{"status": "ok"}` (503 while models load)
//! * `GET /models` → `[{"name", "kind": "encoder"|"summarizer", "dimension"?, "max_tokens"}]`
//! * `POST /embed` `{"model", "texts": [..], "mode": "tokens"|"mean"}` →
//!   `{"dim", "results": [{"tokens"?: [..], "vectors": [[..]], "truncated"?}]}`
//! * `POST /summarize` `{"model", "text", "max_length"?}` → `{"summary", "truncated"}`

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SidecarError {
    #[error("transport error talking to {url} after {attempts} attempt(s): {message}")]
    Transport {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("{url} returned HTTP {status}: {body}")]
    Status {
        url: String,
        status: u16,
        body: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl SidecarError {
    pub fn is_retryable(&self) -> bool {
        match self {
            SidecarError::Transport { .. } => true,
            SidecarError::Status { status, .. } => *status == 503 || *status >= 500,
            SidecarError::Protocol(_) => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Encoder,
    Summarizer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub kind: ModelKind,
    #[serde(default)]
    pub dimension: Option<usize>,
    #[serde(default)]
    pub max_tokens: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct Health {
    status: String,
}

pub struct SidecarClient {
    base_url: String,
    agent: ureq::Agent,
    max_attempts: u32,
    backoff: Duration,
    requests: AtomicUsize,
}

impl SidecarClient {
    pub fn new(base_url: &str) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new()
                .timeout_connect(Duration::from_secs(5))
                .timeout(Duration::from_secs(600))
                .build(),
            max_attempts: 3,
            backoff: Duration::from_millis(200),
            requests: AtomicUsize::new(0),
        }
    }

    pub fn with_retry(mut self, max_attempts: u32, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Number of HTTP requests issued so far, retries included.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn call<T: DeserializeOwned>(
        &self,
        path: &str,
        body: Option<&serde_json::Value>,
    ) -> Result<T, SidecarError> {
        let url = format!("{}{}", self.base_url, path);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.requests.fetch_add(1, Ordering::SeqCst);
            let result = match body {
                Some(b) => self.agent.post(&url).send_json(b),
                None => self.agent.get(&url).call(),
            };
            let err = match result {
                Ok(resp) => {
                    return resp.into_json::<T>().map_err(|e| {
                        SidecarError::Protocol(format!("undecodable response from {url}: {e}"))
                    })
                }
                Err(ureq::Error::Status(status, resp)) => SidecarError::Status {
                    url: url.clone(),
                    status,
                    body: resp.into_string().unwrap_or_default(),
                },
                Err(ureq::Error::Transport(t)) => SidecarError::Transport {
                    url: url.clone(),
                    attempts: attempt,
                    message: t.to_string(),
                },
            };
            if !err.is_retryable() || attempt >= self.max_attempts {
                return Err(match err {
                    SidecarError::Transport { url, message, .. } => SidecarError::Transport {
                        url,
                        attempts: attempt,
                        message,
                    },
                    other => other,
                });
            }
            log::warn!("{err}; retrying");
            std::thread::sleep(self.backoff * attempt);
        }
    }

    pub fn health(&self) -> Result<(), SidecarError> {
        let h: Health = self.call("/health", None)?;
        if h.status == "ok" {
            Ok(())
        } else {
            Err(SidecarError::Protocol(format!(
                "service not healthy: {}",
                h.status
            )))
        }
    }

    pub fn models(&self) -> Result<Vec<ModelDescriptor>, SidecarError> {
        self.call("/models", None)
    }

    /// Looks up `name` among the advertised models of the given kind.
    pub fn find_model(&self, name: &str, kind: ModelKind) -> Result<ModelDescriptor, SidecarError> {
        let models = self.models()?;
        models
            .iter()
            .find(|m| m.name == name && m.kind == kind)
            .cloned()
            .ok_or_else(|| {
                let advertised: Vec<&str> = models
                    .iter()
                    .filter(|m| m.kind == kind)
                    .map(|m| m.name.as_str())
                    .collect();
                SidecarError::Protocol(format!(
                    "model {name:?} is not advertised; available {kind:?} models: [{}]",
                    advertised.join(", ")
                ))
            })
    }

    pub fn post<T: DeserializeOwned>(
        &self,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<T, SidecarError> {
        self.call(path, Some(body))
    }
}
