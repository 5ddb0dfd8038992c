//! Dataset manifests: line-delimited JSON describing samples.
//!
//! The first line is a header declaring the label vocabulary; every other
//! line is one sample:
//!
//! ```text
//! {"format":"graphkd-manifest","version":1,"labels":["c0","c1"],"config":{...}}
//! {"id":"s0","question":"...","language_context":"...","visual_context":{"embedding":"s0/visual"},"label":"c1","group":"g0","split":"train"}
//! ```
//!
//! `visual_context` is either `{"text": "..."}` or `{"embedding": "<id>"}`;
//! an optional `vl_embedding` id overrides the combined vision-language node.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingStore;
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "graphkd-manifest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisualContext {
    Text(String),
    Embedding(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub question: String,
    pub language_context: String,
    pub visual: VisualContext,
    pub vl_embedding: Option<String>,
    pub label: usize,
    pub group: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub samples: Vec<Sample>,
    /// Configuration echo carried by the manifest header, if any.
    pub config: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    labels: Vec<String>,
    #[serde(default)]
    config: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    question: String,
    #[serde(default)]
    language_context: String,
    visual_context: VisualContext,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vl_embedding: Option<String>,
    label: String,
    #[serde(default)]
    group: String,
    split: String,
}

/// Counts reported after ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub samples: usize,
    pub per_split: BTreeMap<String, usize>,
    pub labels: Vec<String>,
    pub groups: Vec<String>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn summary(&self) -> IngestSummary {
        let mut per_split = BTreeMap::new();
        for s in Split::ALL {
            per_split.insert(s.to_string(), 0);
        }
        let mut groups: Vec<String> = Vec::new();
        for s in &self.samples {
            *per_split.get_mut(s.split.as_str()).unwrap() += 1;
            if !groups.contains(&s.group) {
                groups.push(s.group.clone());
            }
        }
        groups.sort();
        IngestSummary {
            samples: self.samples.len(),
            per_split,
            labels: self.labels.clone(),
            groups,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty manifest".into(),
        })?;
        let header: Header = serde_json::from_str(first).map_err(|e| Error::Parse {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
        if header.format != MANIFEST_FORMAT || header.version != 1 {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported manifest {} v{}", header.format, header.version),
            });
        }
        if header.labels.is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "empty label vocabulary".into(),
            });
        }

        let mut seen = HashSet::new();
        let mut samples = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let label = header.labels.iter().position(|l| *l == rec.label).ok_or_else(|| Error::Vocabulary {
                line: line_no,
                field: "label",
                token: rec.label.clone(),
            })?;
            let split = rec.split.parse().map_err(|_| Error::Vocabulary {
                line: line_no,
                field: "split",
                token: rec.split.clone(),
            })?;
            if !seen.insert(rec.id.clone()) {
                return Err(Error::Duplicate(rec.id));
            }
            samples.push(Sample {
                id: rec.id,
                question: rec.question,
                language_context: rec.language_context,
                visual: rec.visual_context,
                vl_embedding: rec.vl_embedding,
                label,
                group: rec.group,
                split,
            });
        }
        Ok(Dataset {
            labels: header.labels,
            samples,
            config: header.config,
        })
    }

    pub fn render(&self) -> Result<String> {
        let header = Header {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            labels: self.labels.clone(),
            config: self.config.clone(),
        };
        let mut out = serde_json::to_string(&header).map_err(json_err)?;
        out.push('\n');
        for s in &self.samples {
            let label = self
                .labels
                .get(s.label)
                .ok_or(Error::Label {
                    label: s.label,
                    classes: self.labels.len(),
                })?
                .clone();
            let rec = Record {
                id: s.id.clone(),
                question: s.question.clone(),
                language_context: s.language_context.clone(),
                visual_context: s.visual.clone(),
                vl_embedding: s.vl_embedding.clone(),
                label,
                group: s.group.clone(),
                split: s.split.to_string(),
            };
            out.push_str(&serde_json::to_string(&rec).map_err(json_err)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Checks that every embedding reference resolves in `store`.
    pub fn resolve(&self, store: &EmbeddingStore) -> Result<()> {
        for s in &self.samples {
            if let VisualContext::Embedding(id) = &s.visual {
                store.require(id)?;
            }
            if let Some(id) = &s.vl_embedding {
                store.require(id)?;
            }
        }
        Ok(())
    }
}

/// Reads and validates a manifest, resolving embedding references against
/// `store` when one is given.
pub fn ingest_manifest(path: impl AsRef<Path>, store: Option<&EmbeddingStore>) -> Result<Dataset> {
    let data = Dataset::parse(&std::fs::read_to_string(path)?)?;
    if let Some(store) = store {
        data.resolve(store)?;
    }
    Ok(data)
}

pub(crate) fn json_err(e: serde_json::Error) -> Error {
    Error::Input(format!("serialization failed: {e}"))
}
