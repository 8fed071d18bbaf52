//! Token embedding backends and the locator's input matrices.
//!
//! A transcript becomes an [`UtteranceMatrix`]: one average word embedding
//! per turn, in turn order. A query stays a raw [`TokenMatrix`] with one row
//! per token.

pub(crate) mod cache;
mod hash;
mod remote;

pub use cache::EmbeddingCache;
pub use hash::HashBackend;
pub use remote::RemoteBackend;

use serde::{Deserialize, Serialize};

use crate::ingest::{preprocess_text, Meeting};
use crate::matrix::Matrix;
use crate::sidecar::SidecarError;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot embed empty input")]
    EmptyInput,
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("embedding cache error: {0}")]
    Cache(#[from] std::io::Error),
    #[error("embedding meeting {meeting_id}: {source}")]
    Meeting {
        meeting_id: String,
        #[source]
        source: Box<EmbedError>,
    },
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        match self {
            EmbedError::Sidecar(e) => e.is_retryable(),
            EmbedError::Meeting { source, .. } => source.is_retryable(),
            _ => false,
        }
    }

    pub fn is_transport(&self) -> bool {
        match self {
            EmbedError::Sidecar(SidecarError::Transport { .. }) => true,
            EmbedError::Meeting { source, .. } => source.is_transport(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    /// `hash` or `remote:<model>`.
    pub name: String,
    pub dimension: usize,
}

/// One row per token. Never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub rows: Matrix,
    pub tokens: Vec<String>,
}

impl TokenMatrix {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }
}

/// One row per meeting turn.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceMatrix(pub Matrix);

impl UtteranceMatrix {
    pub fn turns(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

/// A source of token embeddings. Implementations are deterministic for a
/// fixed input and safe to call from several threads.
pub trait EmbeddingBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Embeds already-preprocessed, non-empty text.
    fn embed_cleaned(&self, text: &str) -> Result<TokenMatrix, EmbedError>;

    fn embed_tokens(&self, text: &str) -> Result<TokenMatrix, EmbedError> {
        let cleaned = preprocess_text(text);
        if cleaned.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let m = self.embed_cleaned(&cleaned)?;
        if m.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        if m.dim() != self.descriptor().dimension {
            return Err(EmbedError::Protocol(format!(
                "backend {} returned dimension {}, descriptor says {}",
                self.descriptor().name,
                m.dim(),
                self.descriptor().dimension
            )));
        }
        Ok(m)
    }
}

/// Component-wise mean of the rows.
pub fn average_word_embedding(m: &Matrix) -> Result<Vec<f64>, EmbedError> {
    if m.rows() == 0 {
        return Err(EmbedError::EmptyInput);
    }
    let mut acc = vec![0.0; m.cols()];
    for row in m.iter_rows() {
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += x;
        }
    }
    let n = m.rows() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Per-turn AWE rows. Turns that are empty after cleaning become zero rows so
/// row indices stay aligned with gold spans.
pub fn embed_transcript(
    backend: &dyn EmbeddingBackend,
    meeting: &Meeting,
) -> Result<UtteranceMatrix, EmbedError> {
    let d = backend.descriptor().dimension;
    let mut out = Matrix::zeros(meeting.length(), d);
    for (t, turn) in meeting.turns.iter().enumerate() {
        if turn.cleaned.is_empty() {
            continue;
        }
        let tokens = backend
            .embed_tokens(&turn.cleaned)
            .map_err(|e| EmbedError::Meeting {
                meeting_id: meeting.id.clone(),
                source: Box::new(e),
            })?;
        let awe = average_word_embedding(&tokens.rows)?;
        out.row_mut(t).copy_from_slice(&awe);
    }
    Ok(UtteranceMatrix(out))
}

/// Raw token matrix for a query, not averaged.
pub fn embed_query(
    backend: &dyn EmbeddingBackend,
    query_text: &str,
) -> Result<TokenMatrix, EmbedError> {
    backend.embed_tokens(query_text)
}
