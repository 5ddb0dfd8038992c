//! Line-delimited JSON graph files.
//!
//! Line 1 is a header with the label vocabulary, embedding dimension and
//! the configuration that produced the graphs; each following line is one
//! subgraph with its nodes (kind, id, embedding) and the dense row-major
//! adjacency. Floats are written in shortest round-trip form, so reading a
//! file back reproduces every value bitwise.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Node, NodeKind, Subgraph};
use crate::error::{Error, Result};
use crate::manifest::{json_err, Split};
use crate::tensor::Tensor;

pub const GRAPHS_FORMAT: &str = "graphkd-graphs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSetHeader {
    pub format: String,
    pub version: u32,
    pub labels: Vec<String>,
    pub dim: usize,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSet {
    pub labels: Vec<String>,
    pub dim: usize,
    pub config: serde_json::Value,
    pub graphs: Vec<Subgraph>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    kind: NodeKind,
    id: String,
    embedding: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    sample_id: String,
    split: Split,
    label: usize,
    group: String,
    nodes: Vec<NodeRecord>,
    adjacency: Vec<f64>,
}

impl GraphSet {
    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn split(&self, split: Split) -> Vec<&Subgraph> {
        self.graphs.iter().filter(|g| g.split == split).collect()
    }

    pub fn render(&self) -> Result<String> {
        let header = GraphSetHeader {
            format: GRAPHS_FORMAT.into(),
            version: 1,
            labels: self.labels.clone(),
            dim: self.dim,
            config: self.config.clone(),
        };
        let mut out = serde_json::to_string(&header).map_err(json_err)?;
        out.push('\n');
        for g in &self.graphs {
            let rec = GraphRecord {
                sample_id: g.sample_id.clone(),
                split: g.split,
                label: g.label,
                group: g.group.clone(),
                nodes: g
                    .nodes
                    .iter()
                    .map(|n| NodeRecord {
                        kind: n.kind,
                        id: n.id.clone(),
                        embedding: n.embedding.clone(),
                    })
                    .collect(),
                adjacency: g.adjacency.data().to_vec(),
            };
            out.push_str(&serde_json::to_string(&rec).map_err(json_err)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty graph file".into(),
        })?;
        let header: GraphSetHeader = serde_json::from_str(first).map_err(|e| Error::Parse {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
        if header.format != GRAPHS_FORMAT || header.version != 1 {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported graph file {} v{}", header.format, header.version),
            });
        }
        let mut graphs = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse { line: line_no, message };
            let rec: GraphRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            let n = rec.nodes.len();
            if rec.label >= header.labels.len() {
                return Err(bad(format!("label {} outside vocabulary", rec.label)));
            }
            if rec.nodes.iter().any(|node| node.embedding.len() != header.dim) {
                return Err(bad(format!("node embedding dimension differs from {}", header.dim)));
            }
            let adjacency = Tensor::new(n, n, rec.adjacency).map_err(|e| bad(e.to_string()))?;
            graphs.push(Subgraph {
                sample_id: rec.sample_id,
                split: rec.split,
                label: rec.label,
                group: rec.group,
                nodes: rec
                    .nodes
                    .into_iter()
                    .map(|n| Node {
                        kind: n.kind,
                        id: n.id,
                        embedding: n.embedding,
                    })
                    .collect(),
                adjacency,
            });
        }
        Ok(GraphSet {
            labels: header.labels,
            dim: header.dim,
            config: header.config,
            graphs,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.render()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
