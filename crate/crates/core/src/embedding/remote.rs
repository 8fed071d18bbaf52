use serde::Deserialize;

use super::{BackendDescriptor, EmbedError, EmbeddingBackend, EmbeddingCache, TokenMatrix};
use crate::matrix::Matrix;
use crate::sidecar::{ModelKind, SidecarClient};

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    results: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    #[serde(default)]
    tokens: Option<Vec<String>>,
    vectors: Vec<Vec<f64>>,
}

/// Token embeddings from a sidecar encoder (`/embed`, tokens mode), cached on
/// disk per (backend, text).
pub struct RemoteBackend {
    client: SidecarClient,
    model: String,
    descriptor: BackendDescriptor,
    cache: Option<EmbeddingCache>,
}

impl RemoteBackend {
    /// Checks `/health` and resolves `model` against `/models`.
    pub fn connect(
        client: SidecarClient,
        model: &str,
        cache: Option<EmbeddingCache>,
    ) -> Result<Self, EmbedError> {
        client.health()?;
        let desc = client.find_model(model, ModelKind::Encoder)?;
        let dimension = desc.dimension.filter(|&d| d > 0).ok_or_else(|| {
            EmbedError::Protocol(format!("encoder {model} advertises no dimension"))
        })?;
        Ok(Self {
            client,
            model: model.to_string(),
            descriptor: BackendDescriptor {
                name: format!("remote:{model}"),
                dimension,
            },
            cache,
        })
    }

    pub fn client(&self) -> &SidecarClient {
        &self.client
    }

    fn fetch(&self, text: &str) -> Result<TokenMatrix, EmbedError> {
        let body = serde_json::json!({ "model": self.model, "texts": [text], "mode": "tokens" });
        let resp: EmbedResponse = self.client.post("/embed", &body)?;
        let d = self.descriptor.dimension;
        if resp.dim != d {
            return Err(EmbedError::Protocol(format!(
                "/embed reported dim {} for {}, /models advertised {d}",
                resp.dim, self.model
            )));
        }
        let item = resp
            .results
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::Protocol("/embed returned no results".into()))?;
        if item.vectors.iter().any(|v| v.len() != d) {
            return Err(EmbedError::Protocol(
                "/embed vector length differs from dim".into(),
            ));
        }
        let rows = Matrix::from_rows(&item.vectors).expect("rows checked above");
        if !rows.is_finite() {
            return Err(EmbedError::Protocol(
                "/embed returned non-finite values".into(),
            ));
        }
        let tokens = match item.tokens {
            Some(t) if t.len() == rows.rows() => t,
            _ => (0..rows.rows()).map(|i| format!("#{i}")).collect(),
        };
        Ok(TokenMatrix { rows, tokens })
    }
}

impl EmbeddingBackend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_cleaned(&self, text: &str) -> Result<TokenMatrix, EmbedError> {
        if let Some(cache) = &self.cache {
            if let Some((rows, tokens)) = cache.get(&self.descriptor.name, text)? {
                let tokens =
                    tokens.unwrap_or_else(|| (0..rows.rows()).map(|i| format!("#{i}")).collect());
                return Ok(TokenMatrix { rows, tokens });
            }
        }
        let m = self.fetch(text)?;
        if let Some(cache) = &self.cache {
            cache.put(&self.descriptor.name, text, &m.rows, Some(&m.tokens))?;
        }
        Ok(m)
    }
}
