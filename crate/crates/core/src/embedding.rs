//! Id-keyed embedding tables, the deterministic stand-in text embedder, and
//! cosine similarity.
//!
//! Stores are persisted in the `GEMB` binary format:
//!
//! ```text
//! "GEMB" | version u32 = 1 | dim u32 | count u64 |
//!   count × ( id_len u16 | id utf-8 | dim × f32 )
//! ```
//!
//! All integers and floats are little-endian. Vectors are held as `f64` in
//! memory but every inserted value is rounded to `f32` precision first, so a
//! store written and read back is bitwise identical to the original.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::binio::{put_short_str, ByteReader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GEMB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends an entry. Values are rounded to `f32` precision.
    pub fn insert(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::shape("EmbeddingStore::insert", (1, self.dim), (1, vector.len())));
        }
        let rounded: Vec<f64> = vector.iter().map(|&v| v as f32 as f64).collect();
        if rounded.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("EmbeddingStore::insert"));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Duplicate(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(rounded);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }

    pub fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id).ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// Appends every entry of `other`; ids must stay unique.
    pub fn merge(&mut self, other: &EmbeddingStore) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::shape("EmbeddingStore::merge", (1, self.dim), (1, other.dim)));
        }
        for (id, v) in other.iter() {
            self.insert(id, v)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(20 + self.len() * (self.dim * 4 + 8));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let dim = u32::try_from(self.dim).map_err(|_| Error::Input("dimension exceeds u32".into()))?;
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (id, v) in self.iter() {
            put_short_str(&mut out, id)?;
            for &x in v {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let dim = r.u32("dim")? as usize;
        let count = r.u64("count")?;
        let mut store = EmbeddingStore::new(dim);
        let mut vector = vec![0.0; dim];
        for _ in 0..count {
            let at = r.offset();
            let id = r.short_str("id")?;
            for slot in vector.iter_mut() {
                *slot = r.f32("vector component")? as f64;
            }
            store.insert(id, &vector).map_err(|e| match e {
                Error::Duplicate(id) => Error::format(at, format!("duplicate id {id:?}")),
                Error::NonFinite(_) => Error::format(at, "non-finite vector component"),
                other => other,
            })?;
        }
        r.finish()?;
        Ok(store)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Lowercased alphanumeric tokens of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// The vector returned for text without tokens: the first basis vector.
pub fn empty_text_vector(dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = 1.0;
    v
}

/// Gaussian projection row assigned to a token under `seed`.
pub fn token_row(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.as_bytes());
    let digest = hasher.finalize();
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()));
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Deterministic bag-of-tokens embedding: the L2-normalized sum of the
/// tokens' projection rows. Text without tokens maps to `e₁`.
pub fn toy_embed(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if dim < 2 {
        return Err(Error::Config(format!("embedding dimension must be at least 2, got {dim}")));
    }
    let tokens = tokenize(text);
    let mut sum = vec![0.0; dim];
    for token in &tokens {
        for (s, r) in sum.iter_mut().zip(token_row(token, dim, seed)) {
            *s += r;
        }
    }
    Ok(normalize(&sum).unwrap_or_else(|| empty_text_vector(dim)))
}

/// Unit-norm copy of `v`, or `None` when `v` has zero norm.
pub fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let norm = l2_norm(v);
    if norm > 0.0 && norm.is_finite() {
        Some(v.iter().map(|x| x / norm).collect())
    } else {
        None
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `u·v / (‖u‖‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine_sim", (1, u.len()), (1, v.len())));
    }
    let (nu, nv) = (l2_norm(u), l2_norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}
