//! Per-sample heterogeneous subgraphs.
//!
//! Every subgraph holds four content nodes (question, language context,
//! visual context, combined vision-language) followed by the commonsense
//! triplets retrieved for them, ordered by ascending triplet index. Edge
//! weights come from cosine similarity and from co-retrieval PMI measured on
//! the training split; see [`edges`].

pub mod dump;
pub mod edges;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{empty_text_vector, normalize, toy_embed, EmbeddingStore};
use crate::error::{Error, Result};
use crate::manifest::{Dataset, Sample, Split, VisualContext};
use crate::tensor::Tensor;
use crate::triplets::{triplet_id, TripletStore, DEFAULT_K};

pub use edges::{build_edges, normalize_adjacency, pmi_weight, CooccurrenceStats, EdgeMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Question,
    LanguageContext,
    VisualContext,
    Vl,
    Commonsense,
}

impl NodeKind {
    /// Content kinds in subgraph order.
    pub const CONTENT: [NodeKind; 4] = [
        NodeKind::Question,
        NodeKind::LanguageContext,
        NodeKind::VisualContext,
        NodeKind::Vl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Question => "question",
            NodeKind::LanguageContext => "language-context",
            NodeKind::VisualContext => "visual-context",
            NodeKind::Vl => "vl",
            NodeKind::Commonsense => "commonsense",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub id: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub sample_id: String,
    pub split: Split,
    pub label: usize,
    pub group: String,
    pub nodes: Vec<Node>,
    /// Symmetric, hollow, entries in [0, 1].
    pub adjacency: Tensor,
}

impl Subgraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.embedding.len())
    }

    /// Node embeddings stacked as an N×dim matrix.
    pub fn features(&self) -> Result<Tensor> {
        Tensor::from_rows(&self.nodes.iter().map(|n| n.embedding.as_slice()).collect::<Vec<_>>())
    }

    /// The four content-node embeddings as a 4×dim matrix.
    pub fn content_features(&self) -> Result<Tensor> {
        if self.nodes.len() < 4 || self.nodes[..4].iter().map(|n| n.kind).ne(NodeKind::CONTENT) {
            return Err(Error::Invariant(format!(
                "subgraph {} does not start with the four content nodes",
                self.sample_id
            )));
        }
        Tensor::from_rows(&self.nodes[..4].iter().map(|n| n.embedding.as_slice()).collect::<Vec<_>>())
    }

    pub fn normalized_adjacency(&self) -> Result<Tensor> {
        normalize_adjacency(&self.adjacency)
    }
}

/// How question and context texts become vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum TextEmbedding {
    /// Look up `<sample-id>#question`, `#language`, `#visual` in the store.
    Precomputed,
    /// Embed on the fly with the stand-in embedder.
    Toy { seed: u64 },
}

/// Store id holding the precomputed embedding of one of a sample's texts.
pub fn text_embedding_id(sample_id: &str, kind: NodeKind) -> String {
    let suffix = match kind {
        NodeKind::Question => "question",
        NodeKind::LanguageContext => "language",
        NodeKind::VisualContext => "visual",
        NodeKind::Vl => "vl",
        NodeKind::Commonsense => "commonsense",
    };
    format!("{sample_id}#{suffix}")
}

/// Toy embeddings of every sample text (question, language context and
/// textual visual context) keyed by [`text_embedding_id`].
pub fn embed_dataset(dataset: &Dataset, dim: usize, seed: u64) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new(dim);
    for s in &dataset.samples {
        store.insert(text_embedding_id(&s.id, NodeKind::Question), &toy_embed(&s.question, dim, seed)?)?;
        store.insert(
            text_embedding_id(&s.id, NodeKind::LanguageContext),
            &toy_embed(&s.language_context, dim, seed)?,
        )?;
        if let VisualContext::Text(text) = &s.visual {
            store.insert(text_embedding_id(&s.id, NodeKind::VisualContext), &toy_embed(text, dim, seed)?)?;
        }
    }
    Ok(store)
}

fn embed_text(
    sample: &Sample,
    kind: NodeKind,
    text: &str,
    store: &EmbeddingStore,
    mode: TextEmbedding,
) -> Result<Vec<f64>> {
    match mode {
        TextEmbedding::Precomputed => Ok(store.require(&text_embedding_id(&sample.id, kind))?.to_vec()),
        TextEmbedding::Toy { seed } => toy_embed(text, store.dim(), seed),
    }
}

/// The four content nodes of a sample in fixed kind order.
pub fn build_content_nodes(sample: &Sample, store: &EmbeddingStore, mode: TextEmbedding) -> Result<Vec<Node>> {
    let question = embed_text(sample, NodeKind::Question, &sample.question, store, mode)?;
    let language = embed_text(sample, NodeKind::LanguageContext, &sample.language_context, store, mode)?;
    let visual = match &sample.visual {
        VisualContext::Embedding(id) => store.require(id)?.to_vec(),
        VisualContext::Text(text) => embed_text(sample, NodeKind::VisualContext, text, store, mode)?,
    };
    let vl = match &sample.vl_embedding {
        Some(id) => store.require(id)?.to_vec(),
        None => {
            let mean: Vec<f64> = visual.iter().zip(&language).map(|(a, b)| 0.5 * (a + b)).collect();
            normalize(&mean).unwrap_or_else(|| empty_text_vector(store.dim()))
        }
    };
    let node = |kind: NodeKind, embedding: Vec<f64>| Node {
        kind,
        id: format!("{}/{}", sample.id, kind),
        embedding,
    };
    Ok(vec![
        node(NodeKind::Question, question),
        node(NodeKind::LanguageContext, language),
        node(NodeKind::VisualContext, visual),
        node(NodeKind::Vl, vl),
    ])
}

/// A content node → triplet retrieval event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalLink {
    /// Position of the content node (0..4).
    pub content: usize,
    pub triplet: usize,
    pub similarity: f64,
}

/// Retrieves the top-`k` triplets for every content node and returns the
/// deduplicated commonsense nodes (ascending triplet index) with the log.
pub fn attach_commonsense(
    content: &[Node],
    store: &TripletStore,
    k: usize,
) -> Result<(Vec<Node>, Vec<RetrievalLink>)> {
    let mut log = Vec::new();
    for (pos, node) in content.iter().enumerate() {
        for hit in store.top_k(&node.embedding, k)? {
            log.push(RetrievalLink {
                content: pos,
                triplet: hit.index,
                similarity: hit.similarity,
            });
        }
    }
    let mut indices: Vec<usize> = log.iter().map(|l| l.triplet).collect();
    indices.sort_unstable();
    indices.dedup();
    let nodes = indices
        .into_iter()
        .map(|i| Node {
            kind: NodeKind::Commonsense,
            id: triplet_id(i),
            embedding: store.embedding(i).to_vec(),
        })
        .collect();
    Ok((nodes, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub k: usize,
    pub mode: EdgeMode,
    pub tau: f64,
    pub text: TextEmbedding,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k: DEFAULT_K,
            mode: EdgeMode::Hybrid,
            tau: 0.0,
            text: TextEmbedding::Precomputed,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(-1.0..1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [-1, 1), got {}", self.tau)));
        }
        Ok(())
    }
}

/// Builds one subgraph per sample.
///
/// Retrieval runs first for every sample; co-occurrence statistics are then
/// accumulated over training samples only, and edges are built per sample.
/// Both passes may run in parallel; results keep sample order.
pub fn build_graphs(
    dataset: &Dataset,
    store: &EmbeddingStore,
    triplets: &TripletStore,
    config: &GraphConfig,
) -> Result<Vec<Subgraph>> {
    config.validate()?;
    if store.dim() != triplets.dim() {
        return Err(Error::Config(format!(
            "content embeddings have dim {} but triplet embeddings have dim {}",
            store.dim(),
            triplets.dim()
        )));
    }
    dataset.resolve(store)?;

    let retrieved: Vec<(Vec<Node>, Vec<Node>, Vec<RetrievalLink>)> = dataset
        .samples
        .par_iter()
        .map(|sample| {
            let content = build_content_nodes(sample, store, config.text)?;
            let (commonsense, log) = attach_commonsense(&content, triplets, config.k)?;
            Ok((content, commonsense, log))
        })
        .collect::<Result<_>>()?;

    let stats = CooccurrenceStats::from_samples(
        triplets.len(),
        dataset
            .samples
            .iter()
            .zip(&retrieved)
            .filter(|(s, _)| s.split == Split::Train)
            .map(|(_, (_, cs, _))| cs.iter().map(|n| triplet_index(&n.id)).collect::<Vec<_>>()),
    );

    dataset
        .samples
        .par_iter()
        .zip(retrieved.into_par_iter())
        .map(|(sample, (content, commonsense, log))| {
            let mut nodes = content;
            nodes.extend(commonsense);
            let adjacency = build_edges(&nodes, &log, &stats, config.mode, config.tau)?;
            Ok(Subgraph {
                sample_id: sample.id.clone(),
                split: sample.split,
                label: sample.label,
                group: sample.group.clone(),
                nodes,
                adjacency,
            })
        })
        .collect()
}

/// Triplet index of a commonsense node id `t<i>`.
pub(crate) fn triplet_index(id: &str) -> usize {
    id.strip_prefix('t')
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("commonsense node id {id:?} is not a triplet id"))
}

impl FromStr for NodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NodeKind::CONTENT
            .into_iter()
            .chain([NodeKind::Commonsense])
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown node kind {s:?}")))
    }
}
