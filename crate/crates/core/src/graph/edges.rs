//! Edge weights and GCN adjacency normalization.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{triplet_index, Node, NodeKind, RetrievalLink};
use crate::embedding::cosine_sim;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    /// Cosine edges between content nodes and along retrieval links.
    Cosine,
    /// Only PMI edges between commonsense nodes.
    Pmi,
    /// Cosine edges plus PMI edges.
    Hybrid,
}

impl EdgeMode {
    fn cosine(self) -> bool {
        matches!(self, EdgeMode::Cosine | EdgeMode::Hybrid)
    }

    fn pmi(self) -> bool {
        matches!(self, EdgeMode::Pmi | EdgeMode::Hybrid)
    }
}

impl fmt::Display for EdgeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeMode::Cosine => "cosine",
            EdgeMode::Pmi => "pmi",
            EdgeMode::Hybrid => "hybrid",
        })
    }
}

impl FromStr for EdgeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(EdgeMode::Cosine),
            "pmi" => Ok(EdgeMode::Pmi),
            "hybrid" => Ok(EdgeMode::Hybrid),
            other => Err(Error::Config(format!("unknown edge mode {other:?}"))),
        }
    }
}

/// Triplet retrieval counts over a set of samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CooccurrenceStats {
    samples: u64,
    counts: Vec<u64>,
    pairs: HashMap<(usize, usize), u64>,
}

impl CooccurrenceStats {
    /// Counts, per sample, each retrieved triplet once and each unordered
    /// pair of distinct retrieved triplets once.
    pub fn from_samples<I, S>(num_triplets: usize, samples: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[usize]>,
    {
        let mut stats = CooccurrenceStats {
            samples: 0,
            counts: vec![0; num_triplets],
            pairs: HashMap::new(),
        };
        for sample in samples {
            let mut ids = sample.as_ref().to_vec();
            ids.sort_unstable();
            ids.dedup();
            stats.samples += 1;
            for (i, &a) in ids.iter().enumerate() {
                stats.counts[a] += 1;
                for &b in &ids[i + 1..] {
                    *stats.pairs.entry((a, b)).or_insert(0) += 1;
                }
            }
        }
        stats
    }

    /// Builds statistics directly from counts. `pairs` keys may be given in
    /// either order.
    pub fn from_counts(samples: u64, counts: Vec<u64>, pairs: impl IntoIterator<Item = ((usize, usize), u64)>) -> Result<Self> {
        let mut map = HashMap::new();
        for ((a, b), c) in pairs {
            if a == b || a >= counts.len() || b >= counts.len() {
                return Err(Error::Input(format!("invalid pair ({a}, {b})")));
            }
            let key = (a.min(b), a.max(b));
            if c > counts[a].min(counts[b]) {
                return Err(Error::Input(format!("pair count {c} exceeds single counts for ({a}, {b})")));
            }
            map.insert(key, c);
        }
        if counts.iter().any(|&c| c > samples) {
            return Err(Error::Input("single count exceeds sample count".into()));
        }
        Ok(CooccurrenceStats {
            samples,
            counts,
            pairs: map,
        })
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn count(&self, k: usize) -> Result<u64> {
        self.counts.get(k).copied().ok_or(Error::MissingStats(k))
    }

    pub fn pair_count(&self, k1: usize, k2: usize) -> Result<u64> {
        self.count(k1)?;
        self.count(k2)?;
        if k1 == k2 {
            return self.count(k1);
        }
        Ok(self.pairs.get(&(k1.min(k2), k1.max(k2))).copied().unwrap_or(0))
    }
}

/// Normalized PMI of two triplets' co-retrieval, or `None` when they never
/// co-occur or are not positively associated.
pub fn pmi_weight(stats: &CooccurrenceStats, k1: usize, k2: usize) -> Result<Option<f64>> {
    let c12 = stats.pair_count(k1, k2)?;
    let (c1, c2) = (stats.count(k1)?, stats.count(k2)?);
    if c12 == 0 {
        return Ok(None);
    }
    let m = stats.samples as f64;
    let (c1, c2, c12) = (c1 as f64, c2 as f64, c12 as f64);
    let pmi = (c12 * m / (c1 * c2)).ln();
    if pmi <= 0.0 {
        return Ok(None);
    }
    let npmi = pmi / -(c12 / m).ln();
    Ok(Some(npmi.min(1.0)))
}

/// Weighted symmetric adjacency for one subgraph's nodes.
///
/// * content–content: cosine similarity when above `tau`;
/// * content–commonsense: the retrieval similarity along each retrieval link,
///   clamped to `[0, 1]`;
/// * commonsense–commonsense: normalized PMI.
///
/// [`EdgeMode`] selects which rule families apply.
pub fn build_edges(
    nodes: &[Node],
    log: &[RetrievalLink],
    stats: &CooccurrenceStats,
    mode: EdgeMode,
    tau: f64,
) -> Result<Tensor> {
    if !(-1.0..1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must lie in [-1, 1), got {tau}")));
    }
    let n = nodes.len();
    let content: Vec<usize> = (0..n).filter(|&i| nodes[i].kind != NodeKind::Commonsense).collect();
    let commonsense: Vec<(usize, usize)> = (0..n)
        .filter(|&i| nodes[i].kind == NodeKind::Commonsense)
        .map(|i| (i, triplet_index(&nodes[i].id)))
        .collect();

    let mut a = vec![0.0; n * n];
    let mut set = |i: usize, j: usize, w: f64| {
        a[i * n + j] = w;
        a[j * n + i] = w;
    };

    if mode.cosine() {
        for (x, &i) in content.iter().enumerate() {
            for &j in &content[x + 1..] {
                let w = cosine_sim(&nodes[i].embedding, &nodes[j].embedding)?;
                if w > tau {
                    set(i, j, w.clamp(0.0, 1.0));
                }
            }
        }
        for link in log {
            let i = *content.get(link.content).ok_or_else(|| {
                Error::Invariant(format!("retrieval log references content node {}", link.content))
            })?;
            let j = commonsense
                .iter()
                .find(|(_, t)| *t == link.triplet)
                .map(|(pos, _)| *pos)
                .ok_or_else(|| Error::Invariant(format!("retrieved triplet t{} is not a node", link.triplet)))?;
            set(i, j, link.similarity.clamp(0.0, 1.0));
        }
    }

    if mode.pmi() {
        for (x, &(i, ti)) in commonsense.iter().enumerate() {
            for &(j, tj) in &commonsense[x + 1..] {
                if let Some(w) = pmi_weight(stats, ti, tj)? {
                    set(i, j, w);
                }
            }
        }
    }

    Tensor::new(n, n, a)
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the row sums of `A + I`.
pub fn normalize_adjacency(adjacency: &Tensor) -> Result<Tensor> {
    let (n, cols) = adjacency.shape();
    if n != cols {
        return Err(Error::Invariant(format!("adjacency is not square: {n}×{cols}")));
    }
    for i in 0..n {
        if adjacency.get(i, i) != 0.0 {
            return Err(Error::Invariant(format!("adjacency diagonal entry {i} is nonzero")));
        }
        for j in 0..n {
            let v = adjacency.get(i, j);
            if v < 0.0 {
                return Err(Error::Invariant(format!("negative adjacency entry at ({i}, {j})")));
            }
            if v != adjacency.get(j, i) {
                return Err(Error::Invariant(format!("adjacency is asymmetric at ({i}, {j})")));
            }
        }
    }
    let with_loops = adjacency.add(&Tensor::eye(n))?;
    let mut inv_sqrt = Tensor::zeros(n, n);
    for i in 0..n {
        let degree: f64 = with_loops.row(i).iter().sum();
        inv_sqrt.data_mut()[i * n + i] = 1.0 / degree.sqrt();
    }
    inv_sqrt.matmul(&with_loops)?.matmul(&inv_sqrt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Tensor, b: &[&[f64]], tol: f64) {
        let b = Tensor::from_rows(b).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn normalize_worked_examples() {
        let a = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        close(&normalize_adjacency(&a).unwrap(), &[&[0.5, 0.5], &[0.5, 0.5]], 1e-15);
        let a = Tensor::zeros(1, 1);
        close(&normalize_adjacency(&a).unwrap(), &[&[1.0]], 0.0);
        let a = Tensor::from_rows(&[[0.0, 0.5], [0.5, 0.0]]).unwrap();
        close(
            &normalize_adjacency(&a).unwrap(),
            &[&[0.6667, 0.3333], &[0.3333, 0.6667]],
            1e-4,
        );
    }

    #[test]
    fn normalize_rejects_bad_input() {
        let asym = Tensor::from_rows(&[[0.0, 1.0], [0.5, 0.0]]).unwrap();
        assert!(matches!(normalize_adjacency(&asym), Err(Error::Invariant(_))));
        let neg = Tensor::from_rows(&[[0.0, -1.0], [-1.0, 0.0]]).unwrap();
        assert!(matches!(normalize_adjacency(&neg), Err(Error::Invariant(_))));
    }

    #[test]
    fn pmi_examples() {
        let stats = CooccurrenceStats::from_counts(100, vec![10, 10, 20, 0], [((0, 1), 10), ((0, 2), 2)]).unwrap();
        let w = pmi_weight(&stats, 0, 1).unwrap().unwrap();
        assert!((w - 1.0).abs() < 1e-12);
        assert!((((10.0f64 * 100.0) / (10.0 * 10.0)).ln() - 2.3026).abs() < 1e-4);
        // c12·M = c1·c2: 2·100 = 10·20
        assert_eq!(pmi_weight(&stats, 0, 2).unwrap(), None);
        assert_eq!(pmi_weight(&stats, 1, 2).unwrap(), None);
        assert_eq!(pmi_weight(&stats, 1, 0).unwrap(), pmi_weight(&stats, 0, 1).unwrap());
        assert!(matches!(pmi_weight(&stats, 0, 9), Err(Error::MissingStats(9))));
    }

    #[test]
    fn stats_count_each_sample_once() {
        let stats = CooccurrenceStats::from_samples(4, vec![vec![0, 1, 1], vec![1, 2], vec![0, 1]]);
        assert_eq!(stats.samples(), 3);
        assert_eq!(stats.count(1).unwrap(), 3);
        assert_eq!(stats.pair_count(0, 1).unwrap(), 2);
        assert_eq!(stats.pair_count(2, 1).unwrap(), 1);
        assert_eq!(stats.pair_count(0, 3).unwrap(), 0);
    }

    fn content(vectors: &[&[f64]]) -> Vec<Node> {
        NodeKind::CONTENT
            .into_iter()
            .zip(vectors)
            .map(|(kind, v)| Node {
                kind,
                id: kind.to_string(),
                embedding: v.to_vec(),
            })
            .collect()
    }

    #[test]
    fn content_threshold_and_symmetry() {
        // Node 0–1 cosine 0.8; 0–2 cosine −0.2.
        let nodes = content(&[
            &[1.0, 0.0, 0.0],
            &[0.8, 0.6, 0.0],
            &[-0.2, 0.0, 0.9797958971132712],
            &[0.0, 0.0, 1.0],
        ]);
        let a = build_edges(&nodes, &[], &CooccurrenceStats::default(), EdgeMode::Hybrid, 0.0).unwrap();
        assert!((a.get(0, 1) - 0.8).abs() < 1e-12);
        assert_eq!(a.get(0, 1), a.get(1, 0));
        assert_eq!(a.get(0, 2), 0.0);
        assert_eq!(a.get(2, 0), 0.0);
        for i in 0..4 {
            assert_eq!(a.get(i, i), 0.0);
        }
    }

    #[test]
    fn tau_at_one_is_config_error() {
        let nodes = content(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[1.0, -1.0]]);
        let r = build_edges(&nodes, &[], &CooccurrenceStats::default(), EdgeMode::Cosine, 1.0);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
