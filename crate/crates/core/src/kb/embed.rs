//! Text encoders mapping guideline text and queries into a shared unit-norm
//! embedding space.

use serde_json::json;

use crate::transport::{HttpConfig, JsonClient, TransportError};

/// Embedding dimension of the built-in hashed bag-of-words encoder.
pub const HASHED_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("text has no indexable tokens: {0:?}")]
    ZeroVector(String),
    #[error("encoder backend {backend} unreachable: {source}")]
    Transport {
        backend: String,
        #[source]
        source: TransportError,
    },
    #[error("encoder backend {backend} returned a malformed response: {message}")]
    Malformed { backend: String, message: String },
}

pub trait Encoder: Send + Sync {
    /// Stable identity recorded in saved indexes.
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError>;

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "of", "on",
    "or", "that", "the", "this", "to", "was", "were", "with",
];

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Lowercased alphanumeric tokens of `text`, stopwords removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scale `v` to unit length. Returns `None` for the zero vector.
pub fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / n).collect())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Deterministic test encoder: FNV-1a hashed token counts, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedBowEncoder {
    dim: usize,
    id: String,
}

impl Default for HashedBowEncoder {
    fn default() -> Self {
        Self::new(HASHED_DIM)
    }
}

impl HashedBowEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        HashedBowEncoder { dim, id: format!("hashed-bow-fnv1a-{dim}") }
    }

    pub fn raw_counts(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in tokenize(text) {
            v[(fnv1a(tok.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        v
    }
}

impl Encoder for HashedBowEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts
            .iter()
            .map(|t| normalize(&self.raw_counts(t)).ok_or_else(|| EmbedError::ZeroVector(t.to_string())))
            .collect()
    }
}

/// Remote encoder: `POST {base_url}/embed` with `{texts}` → `{vectors}`.
pub struct HttpEncoder {
    base_url: String,
    dim: usize,
    id: String,
    client: JsonClient,
}

impl HttpEncoder {
    pub fn new(base_url: &str, dim: usize, http: HttpConfig) -> Self {
        let base_url = base_url.trim_end_matches('/').to_string();
        HttpEncoder { id: format!("http:{base_url}"), base_url, dim, client: JsonClient::new(http) }
    }
}

impl Encoder for HttpEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let url = format!("{}/embed", self.base_url);
        let (resp, _) = self.client.post_json(&url, &json!({ "texts": texts }));
        let resp = resp.map_err(|source| EmbedError::Transport { backend: self.id.clone(), source })?;
        let malformed = |message: String| EmbedError::Malformed { backend: self.id.clone(), message };
        let vectors: Vec<Vec<f64>> = serde_json::from_value(resp.get("vectors").cloned().unwrap_or_default())
            .map_err(|e| malformed(e.to_string()))?;
        if vectors.len() != texts.len() {
            return Err(malformed(format!("expected {} vectors, got {}", texts.len(), vectors.len())));
        }
        vectors
            .into_iter()
            .zip(texts)
            .map(|(v, t)| {
                if v.len() != self.dim {
                    return Err(malformed(format!("expected dimension {}, got {}", self.dim, v.len())));
                }
                normalize(&v).ok_or_else(|| EmbedError::ZeroVector(t.to_string()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_unit_norm() {
        let enc = HashedBowEncoder::default();
        let a = enc.embed("left ventricle").unwrap();
        let b = enc.embed("left ventricle").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), HASHED_DIM);
        assert!((l2_norm(&a) - 1.0).abs() < 1e-9);
        assert!((dot(&a, &b) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stopwords_only_is_zero_vector_error() {
        let enc = HashedBowEncoder::default();
        assert!(matches!(enc.embed("the of and"), Err(EmbedError::ZeroVector(_))));
        assert!(matches!(enc.embed("  ,,, "), Err(EmbedError::ZeroVector(_))));
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Is the EF-normal?"), vec!["ef", "normal"]);
    }

    #[test]
    fn unreachable_backend_names_itself() {
        let enc = HttpEncoder::new(
            "http://127.0.0.1:9",
            8,
            HttpConfig { timeout_ms: 200, retries: 0, backoff_ms: 1 },
        );
        match enc.embed("x") {
            Err(EmbedError::Transport { backend, .. }) => assert_eq!(backend, "http:http://127.0.0.1:9"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
