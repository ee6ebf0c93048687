//! Embedding vectors and the providers that produce them.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rouge::tokenize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VectorError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("vector must be non-empty")]
    Empty,
    #[error("vector component {index} is not finite")]
    NonFinite { index: usize },
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no embedding recorded for {key:?}")]
    Missing { key: String },
    #[error("cannot read embedding file {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("embedding endpoint failed: {0}")]
    Remote(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite { index });
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Unit-length copy, or all zeros when the vector is zero.
    pub fn normalized_or_zero(&self) -> Vec<f64> {
        let n = self.norm();
        if n == 0.0 {
            vec![0.0; self.dim()]
        } else {
            self.values.iter().map(|v| v / n).collect()
        }
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = VectorError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VectorError> {
    if a.dim() != b.dim() {
        return Err(VectorError::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroNorm);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// What gets embedded. Id-keyed providers use `id` when present.
#[derive(Debug, Clone, Copy)]
pub struct EmbedInput<'a> {
    pub id: Option<&'a str>,
    pub text: &'a str,
}

impl<'a> EmbedInput<'a> {
    pub fn text(text: &'a str) -> Self {
        EmbedInput { id: None, text }
    }

    pub fn keyed(id: &'a str, text: &'a str) -> Self {
        EmbedInput { id: Some(id), text }
    }
}

/// Key under which an un-id'd text is stored in a precomputed file.
pub fn text_key(text: &str) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(text.as_bytes())))
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, input: EmbedInput<'_>) -> Result<EmbeddingVector, ProviderError>;
    fn dim(&self) -> usize;
    /// Stable identity string; checkpoints refuse to score under another provider.
    fn fingerprint(&self) -> String;
}

/// Bag-of-words random projection: every token maps to a fixed pseudo-random
/// vector (ChaCha8 seeded from a hash of the token and the provider seed) and a
/// text embeds as the sum over its tokens.
#[derive(Debug, Clone)]
pub struct HashedProjection {
    dim: usize,
    seed: u64,
}

impl HashedProjection {
    pub const DEFAULT_DIM: usize = 256;
    pub const DEFAULT_SEED: u64 = 0x5eed_0001;

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        HashedProjection { dim, seed }
    }

    fn token_vector(&self, token: &str, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(token.as_bytes()) ^ self.seed);
        for slot in out.iter_mut() {
            *slot += rng.random_range(-1.0..1.0);
        }
    }
}

impl Default for HashedProjection {
    fn default() -> Self {
        HashedProjection::new(Self::DEFAULT_DIM, Self::DEFAULT_SEED)
    }
}

impl EmbeddingProvider for HashedProjection {
    fn embed(&self, input: EmbedInput<'_>) -> Result<EmbeddingVector, ProviderError> {
        let mut values = vec![0.0; self.dim];
        for token in tokenize(input.text) {
            self.token_vector(&token, &mut values);
        }
        Ok(EmbeddingVector::new(values)?)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("hashed-bow/v1/dim={}/seed={}", self.dim, self.seed)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    id: String,
    vector: Vec<f64>,
}

/// Vectors loaded from a line-delimited `{"id", "vector"}` file. Lookups go by
/// document id first, then by [`text_key`] of the text.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbeddings {
    vectors: HashMap<String, EmbeddingVector>,
    dim: usize,
    digest: String,
}

impl PrecomputedEmbeddings {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let err = |message: String| ProviderError::File {
            path: path.to_path_buf(),
            message,
        };
        let file = fs::File::open(path).map_err(|e| err(e.to_string()))?;
        let mut hasher = Sha256::new();
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord = serde_json::from_str(&line)
                .map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            let v = EmbeddingVector::new(rec.vector)
                .map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            match dim {
                None => dim = Some(v.dim()),
                Some(d) if d != v.dim() => {
                    return Err(err(format!(
                        "line {}: vector length {} differs from {}",
                        i + 1,
                        v.dim(),
                        d
                    )))
                }
                _ => {}
            }
            vectors.insert(rec.id, v);
        }
        let dim = dim.ok_or_else(|| err("file contains no vectors".into()))?;
        Ok(PrecomputedEmbeddings {
            vectors,
            dim,
            digest: hex::encode(hasher.finalize()),
        })
    }

    pub fn from_map(vectors: HashMap<String, EmbeddingVector>) -> Result<Self, VectorError> {
        let dim = vectors.values().next().map(|v| v.dim()).ok_or(VectorError::Empty)?;
        if let Some(bad) = vectors.values().find(|v| v.dim() != dim) {
            return Err(VectorError::DimMismatch {
                left: dim,
                right: bad.dim(),
            });
        }
        let mut keys: Vec<_> = vectors.keys().cloned().collect();
        keys.sort();
        let mut hasher = Sha256::new();
        for k in &keys {
            hasher.update(k.as_bytes());
            for v in vectors[k].values() {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(PrecomputedEmbeddings {
            vectors,
            dim,
            digest: hex::encode(hasher.finalize()),
        })
    }
}

impl EmbeddingProvider for PrecomputedEmbeddings {
    fn embed(&self, input: EmbedInput<'_>) -> Result<EmbeddingVector, ProviderError> {
        if let Some(v) = input.id.and_then(|id| self.vectors.get(id)) {
            return Ok(v.clone());
        }
        let key = text_key(input.text);
        self.vectors
            .get(&key)
            .cloned()
            .ok_or_else(|| ProviderError::Missing {
                key: input.id.map(str::to_string).unwrap_or(key),
            })
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("precomputed/{}", &self.digest[..16])
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    input: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    vector: Vec<f64>,
}

/// HTTP endpoint taking `{"input": text}` and answering `{"vector": [...]}`.
pub struct RemoteEmbeddings {
    url: String,
    token: Option<String>,
    dim: usize,
    agent: ureq::Agent,
}

impl RemoteEmbeddings {
    pub fn new(url: impl Into<String>, token: Option<String>, dim: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        RemoteEmbeddings {
            url: url.into(),
            token,
            dim,
            agent,
        }
    }
}

impl EmbeddingProvider for RemoteEmbeddings {
    fn embed(&self, input: EmbedInput<'_>) -> Result<EmbeddingVector, ProviderError> {
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(RemoteRequest { input: input.text })
            .map_err(|e| ProviderError::Remote(e.to_string()))?;
        let body: RemoteResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Remote(e.to_string()))?;
        let v = EmbeddingVector::new(body.vector)?;
        if v.dim() != self.dim {
            return Err(VectorError::DimMismatch {
                left: self.dim,
                right: v.dim(),
            }
            .into());
        }
        Ok(v)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("remote/{}/dim={}", self.url, self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        // dot = 8, norms 3 and 3
        let c = cosine_similarity(&v(&[1.0, 2.0, 2.0]), &v(&[2.0, 1.0, 2.0])).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(VectorError::DimMismatch { left: 1, right: 2 })
        );
        assert_eq!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])),
            Err(VectorError::ZeroNorm)
        );
        assert_eq!(EmbeddingVector::new(vec![]), Err(VectorError::Empty));
        assert_eq!(
            EmbeddingVector::new(vec![1.0, f64::NAN]),
            Err(VectorError::NonFinite { index: 1 })
        );
    }

    #[test]
    fn hashed_projection_is_stable() {
        let p = HashedProjection::new(32, 7);
        let a = p.embed(EmbedInput::text("Rust ownership rules")).unwrap();
        let b = p.embed(EmbedInput::text("rust, ownership; RULES")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 32);
        let other = HashedProjection::new(32, 8).embed(EmbedInput::text("rust")).unwrap();
        assert_ne!(p.embed(EmbedInput::text("rust")).unwrap(), other);
    }

    #[test]
    fn precomputed_lookup_by_id_then_text() {
        let mut map = HashMap::new();
        map.insert("d1".to_string(), v(&[1.0, 0.0]));
        map.insert(text_key("hello"), v(&[0.0, 1.0]));
        let p = PrecomputedEmbeddings::from_map(map).unwrap();
        assert_eq!(p.embed(EmbedInput::keyed("d1", "zzz")).unwrap(), v(&[1.0, 0.0]));
        assert_eq!(p.embed(EmbedInput::text("hello")).unwrap(), v(&[0.0, 1.0]));
        match p.embed(EmbedInput::keyed("d9", "nope")) {
            Err(ProviderError::Missing { key }) => assert_eq!(key, "d9"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn precomputed_file_rejects_ragged_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        fs::write(
            &path,
            "{\"id\":\"a\",\"vector\":[1,2]}\n{\"id\":\"b\",\"vector\":[1,2,3]}\n",
        )
        .unwrap();
        assert!(matches!(
            PrecomputedEmbeddings::load(&path),
            Err(ProviderError::File { .. })
        ));
        fs::write(&path, "{\"id\":\"a\",\"vector\":[1,2]}\n").unwrap();
        let p = PrecomputedEmbeddings::load(&path).unwrap();
        assert_eq!(p.dim(), 2);
        assert!(p.fingerprint().starts_with("precomputed/"));
    }
}
