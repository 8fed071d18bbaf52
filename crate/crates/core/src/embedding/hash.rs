use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{BackendDescriptor, EmbedError, EmbeddingBackend, TokenMatrix};
use crate::matrix::Matrix;

/// Offline deterministic backend: whitespace tokens, each mapped through a
/// seeded 64-bit hash to a unit-norm pseudorandom vector.
#[derive(Debug, Clone)]
pub struct HashBackend {
    descriptor: BackendDescriptor,
    seed: u64,
}

impl HashBackend {
    /// Panics if `dimension < 2`.
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension >= 2, "hash backend needs dimension >= 2");
        Self {
            descriptor: BackendDescriptor {
                name: "hash".into(),
                dimension,
            },
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn token_hash(&self, token: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((self.descriptor.dimension as u64).to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.token_hash(token));
        loop {
            let mut v: Vec<f64> = (0..self.descriptor.dimension)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let norm = crate::matrix::norm(&v);
            if norm > 1e-6 {
                v.iter_mut().for_each(|x| *x /= norm);
                return v;
            }
        }
    }
}

impl EmbeddingBackend for HashBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_cleaned(&self, text: &str) -> Result<TokenMatrix, EmbedError> {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let mut rows = Matrix::zeros(tokens.len(), self.descriptor.dimension);
        for (i, tok) in tokens.iter().enumerate() {
            rows.row_mut(i).copy_from_slice(&self.token_vector(tok));
        }
        Ok(TokenMatrix { rows, tokens })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn single_token_unit_row() {
        let b = HashBackend::new(32, 7);
        let m = b.embed_tokens("hello").unwrap();
        assert_eq!(m.rows.shape(), (1, 32));
        assert!((crate::matrix::norm(m.rows.row(0)) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn repeated_token_identical_rows() {
        let b = HashBackend::new(32, 7);
        let m = b.embed_tokens("hello hello").unwrap();
        assert_eq!(m.rows.row(0), m.rows.row(1));
        assert_ne!(b.token_vector("hello"), b.token_vector("world"));
    }

    #[test]
    fn seed_and_dimension_change_vectors() {
        let a = HashBackend::new(8, 1).token_vector("x");
        let b = HashBackend::new(8, 2).token_vector("x");
        assert_ne!(a, b);
    }

    #[test]
    fn unit_norm_and_no_collisions_on_vocabulary() {
        let b = HashBackend::new(16, 11);
        let mut seen = HashSet::new();
        for i in 0..10_000 {
            let v = b.token_vector(&format!("tok{i}"));
            assert!((crate::matrix::norm(&v) - 1.0).abs() < 1e-9);
            let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
            assert!(seen.insert(key), "collision at tok{i}");
        }
    }
}
