//! Commonsense triplet store and exact top-K retrieval.

use std::fmt::Write as _;
use std::path::Path;

use crate::embedding::{cosine_sim, toy_embed, EmbeddingStore};
use crate::error::{Error, Result};

/// Number of triplets retrieved per content node unless configured otherwise.
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triplet {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Triplet {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }

    /// Text that gets embedded: `head relation tail`.
    pub fn surface(&self) -> String {
        format!("{} {} {}", self.head, self.relation, self.tail)
    }
}

pub fn triplet_id(index: usize) -> String {
    format!("t{index}")
}

/// Triplets aligned by index with embeddings `t0`, `t1`, ….
#[derive(Debug, Clone, PartialEq)]
pub struct TripletStore {
    triplets: Vec<Triplet>,
    embeddings: EmbeddingStore,
}

/// One retrieval hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub index: usize,
    pub similarity: f64,
}

impl TripletStore {
    /// Pairs triplets with their embeddings; the store must hold exactly the
    /// ids `t0..tN` in order.
    pub fn new(triplets: Vec<Triplet>, embeddings: EmbeddingStore) -> Result<Self> {
        if triplets.len() != embeddings.len() {
            return Err(Error::Input(format!(
                "{} triplets but {} triplet embeddings",
                triplets.len(),
                embeddings.len()
            )));
        }
        for i in 0..embeddings.len() {
            let expected = triplet_id(i);
            if embeddings.id(i) != expected {
                return Err(Error::Input(format!(
                    "triplet embedding {i} has id {:?}, expected {expected:?}",
                    embeddings.id(i)
                )));
            }
        }
        Ok(TripletStore { triplets, embeddings })
    }

    /// Embeds every triplet's surface form with the stand-in embedder.
    pub fn embed(triplets: Vec<Triplet>, dim: usize, seed: u64) -> Result<Self> {
        let mut embeddings = EmbeddingStore::new(dim);
        for (i, t) in triplets.iter().enumerate() {
            embeddings.insert(triplet_id(i), &toy_embed(&t.surface(), dim, seed)?)?;
        }
        Self::new(triplets, embeddings)
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn triplet(&self, index: usize) -> &Triplet {
        &self.triplets[index]
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn embedding(&self, index: usize) -> &[f64] {
        self.embeddings.vector(index)
    }

    pub fn embeddings(&self) -> &EmbeddingStore {
        &self.embeddings
    }

    /// Exact top-`k` by cosine similarity, descending, ties by ascending
    /// index. Returns every triplet when the store holds fewer than `k`.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        if self.is_empty() {
            return Err(Error::EmptyStore);
        }
        if query.len() != self.dim() {
            return Err(Error::shape("top_k_triplets", (1, query.len()), (1, self.dim())));
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let mut best: Vec<Hit> = Vec::with_capacity(k + 1);
        for index in 0..self.len() {
            let similarity = cosine_sim(query, self.embedding(index))?;
            if best.len() == k && !(similarity > best[k - 1].similarity) {
                continue;
            }
            // Insert after every hit with similarity >= this one, which keeps
            // earlier (lower) indices ahead on ties.
            let pos = best.partition_point(|h| h.similarity >= similarity);
            best.insert(pos, Hit { index, similarity });
            best.truncate(k);
        }
        Ok(best)
    }
}

/// Parses the triplet TSV: one `head\trelation\ttail` per line.
pub fn parse_triplets_tsv(text: &str) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        out.push(Triplet::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

pub fn render_triplets_tsv(triplets: &[Triplet]) -> Result<String> {
    let mut out = String::new();
    for t in triplets {
        for field in [&t.head, &t.relation, &t.tail] {
            if field.contains(['\t', '\n', '\r']) {
                return Err(Error::Input(format!("triplet field {field:?} contains a tab or newline")));
            }
        }
        writeln!(out, "{}\t{}\t{}", t.head, t.relation, t.tail).unwrap();
    }
    Ok(out)
}

pub fn read_triplets_tsv(path: impl AsRef<Path>) -> Result<Vec<Triplet>> {
    parse_triplets_tsv(&std::fs::read_to_string(path)?)
}
