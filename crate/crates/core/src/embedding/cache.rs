use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::matrix::Matrix;

/// On-disk vector cache: `<root>/<backend>/<sha256-of-text>.vec`.
///
/// Each file is two little-endian `u32` (rows, cols) followed by
/// `rows * cols` little-endian `f64` in row-major order. Token strings, when
/// known, sit next to it in `<sha256>.tokens.json`. Nothing is ever evicted.
#[derive(Debug)]
pub struct EmbeddingCache {
    root: PathBuf,
    write_lock: Mutex<()>,
}

pub(crate) fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Backend names like `remote:roberta` are not portable directory names.
pub(crate) fn backend_dir_name(backend: &str) -> String {
    backend
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(tmp, path)
}

pub fn encode_vec_file(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * m.as_slice().len());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_vec_file(bytes: &[u8]) -> std::io::Result<Matrix> {
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string());
    if bytes.len() < 8 {
        return Err(bad("vector file shorter than its header"));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != rows * cols * 8 {
        return Err(bad("vector file length does not match its header"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

impl EmbeddingCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, backend: &str, text: &str) -> PathBuf {
        self.root
            .join(backend_dir_name(backend))
            .join(format!("{}.vec", content_hash(text)))
    }

    pub fn get(
        &self,
        backend: &str,
        text: &str,
    ) -> std::io::Result<Option<(Matrix, Option<Vec<String>>)>> {
        let path = self.path_for(backend, text);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let m = decode_vec_file(&bytes)?;
        let tokens = std::fs::read(path.with_extension("tokens.json"))
            .ok()
            .and_then(|b| serde_json::from_slice::<Vec<String>>(&b).ok())
            .filter(|t| t.len() == m.rows());
        Ok(Some((m, tokens)))
    }

    pub fn put(
        &self,
        backend: &str,
        text: &str,
        m: &Matrix,
        tokens: Option<&[String]>,
    ) -> std::io::Result<()> {
        let path = self.path_for(backend, text);
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(tokens) = tokens {
            let json = serde_json::to_vec(tokens).map_err(std::io::Error::other)?;
            write_atomic(&path.with_extension("tokens.json"), &json)?;
        }
        write_atomic(&path, &encode_vec_file(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path());
        let m = Matrix::from_rows(&[[1.5, -2.0], [0.25, 3.0], [0.0, 1e-300]]).unwrap();
        cache
            .put("remote:roberta", "hello world", &m, None)
            .unwrap();

        let path = cache.path_for("remote:roberta", "hello world");
        assert!(path.starts_with(dir.path().join("remote_roberta")));
        assert_eq!(
            path.file_name().unwrap().to_str().unwrap(),
            format!("{}.vec", content_hash("hello world"))
        );

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..8], &[3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 6 * 8);

        let (back, tokens) = cache.get("remote:roberta", "hello world").unwrap().unwrap();
        assert_eq!(back, m);
        assert!(tokens.is_none());
        assert!(cache.get("remote:roberta", "other").unwrap().is_none());
    }

    #[test]
    fn truncated_file_is_rejected() {
        assert!(decode_vec_file(&[1, 0, 0, 0, 1, 0, 0, 0, 0]).is_err());
    }
}
