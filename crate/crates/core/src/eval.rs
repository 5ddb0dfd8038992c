//! Model evaluation reports and baseline-versus-treated comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::Subgraph;
use crate::manifest::{json_err, Split};
use crate::metrics::{accuracy, micro_f1, ClassScores, ConfusionMatrix};
use crate::student::Student;
use crate::teacher::{Teacher, TEACHER_MODEL};
use crate::tensor::Tensor;

/// Any model that maps a subgraph to class logits.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Teacher(Teacher),
    Student(Student),
}

impl Model {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.model == TEACHER_MODEL {
            Ok(Model::Teacher(Teacher::from_checkpoint(ckpt)?))
        } else {
            Ok(Model::Student(Student::from_checkpoint(ckpt)?))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Model::Teacher(_) => TEACHER_MODEL,
            Model::Student(s) => s.kind().model_name(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Teacher(t) => t.config.dim,
            Model::Student(s) => s.shape.dim,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Model::Teacher(t) => t.config.classes,
            Model::Student(s) => s.shape.classes,
        }
    }

    pub fn logits(&self, graph: &Subgraph) -> Result<Tensor> {
        match self {
            Model::Teacher(t) => t.subgraph_logits(graph),
            Model::Student(s) => s.logits(&graph.content_features()?),
        }
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, graph: &Subgraph) -> Result<usize> {
        Ok(self.logits(graph)?.row_argmax()[0])
    }

    pub fn config(&self) -> Result<serde_json::Value> {
        match self {
            Model::Teacher(t) => serde_json::to_value(&t.config).map_err(json_err),
            Model::Student(s) => Ok(s.to_checkpoint()?.config),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub samples: usize,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: Split,
    pub samples: usize,
    pub micro_f1: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassScores>,
    pub per_group: BTreeMap<String, GroupScore>,
    pub confusion: ConfusionMatrix,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(json_err)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("bad report: {e}")))
    }
}

/// Scores `model` on the graphs of one split. Predictions are computed in
/// parallel and aggregated in input order.
pub fn evaluate_model(model: &Model, graphs: &[Subgraph], split: Split) -> Result<EvalReport> {
    let selected: Vec<&Subgraph> = graphs.iter().filter(|g| g.split == split).collect();
    if selected.is_empty() {
        return Err(Error::Input(format!("no graphs in split {split}")));
    }
    for g in &selected {
        if g.dim() != model.dim() || g.label >= model.classes() {
            return Err(Error::Config(format!(
                "model ({} dims, {} classes) is incompatible with graph {}",
                model.dim(),
                model.classes(),
                g.sample_id
            )));
        }
    }
    let predictions: Vec<usize> = selected.par_iter().map(|g| model.predict(g)).collect::<Result<_>>()?;
    let labels: Vec<usize> = selected.iter().map(|g| g.label).collect();

    let f1 = micro_f1(&predictions, &labels)?;
    let acc = accuracy(&predictions, &labels)?;
    if f1 != acc {
        return Err(Error::Invariant(format!("micro-F1 {f1} differs from accuracy {acc}")));
    }
    let confusion = ConfusionMatrix::from_predictions(model.classes(), &predictions, &labels)?;
    if confusion.total() != labels.len() as u64 {
        return Err(Error::Invariant("confusion counts do not sum to the sample count".into()));
    }

    let mut groups: BTreeMap<String, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for ((g, p), l) in selected.iter().zip(&predictions).zip(&labels) {
        let e = groups.entry(g.group.clone()).or_default();
        e.0.push(*p);
        e.1.push(*l);
    }
    let per_group = groups
        .into_iter()
        .map(|(name, (p, l))| {
            Ok((
                name,
                GroupScore {
                    samples: l.len(),
                    micro_f1: micro_f1(&p, &l)?,
                },
            ))
        })
        .collect::<Result<_>>()?;

    let config = model.config()?;
    let seed = config
        .get("seed")
        .or_else(|| config.get("training").and_then(|t| t.get("seed")))
        .and_then(|s| s.as_u64());
    Ok(EvalReport {
        model: model.name().into(),
        split,
        samples: labels.len(),
        micro_f1: f1,
        accuracy: acc,
        per_class: confusion.class_scores(),
        per_group,
        confusion,
        seed,
        config,
    })
}

/// One named report and, for treated runs, the name of its baseline.
#[derive(Debug, Clone)]
pub struct NamedRun {
    pub name: String,
    pub report: EvalReport,
    pub baseline: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    /// Per-group micro-F1 in percent.
    pub groups: BTreeMap<String, f64>,
    /// Sample-weighted average in percent (the overall micro-F1).
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPair {
    pub baseline: ComparisonRow,
    pub treated: ComparisonRow,
    pub delta: ComparisonRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub groups: Vec<String>,
    pub pairs: Vec<ComparisonPair>,
    /// Configuration echo of the run that produced the comparison.
    #[serde(default)]
    pub config: serde_json::Value,
}

fn row(name: &str, report: &EvalReport) -> ComparisonRow {
    ComparisonRow {
        name: name.to_string(),
        groups: report
            .per_group
            .iter()
            .map(|(g, s)| (g.clone(), 100.0 * s.micro_f1))
            .collect(),
        average: 100.0 * report.micro_f1,
    }
}

/// `treated − baseline` for the average and every group either row has
/// (a missing group scores 0).
pub fn delta_row(name: &str, baseline: &ComparisonRow, treated: &ComparisonRow) -> ComparisonRow {
    let mut groups = BTreeMap::new();
    for g in baseline.groups.keys().chain(treated.groups.keys()) {
        let t = treated.groups.get(g).copied().unwrap_or(0.0);
        let b = baseline.groups.get(g).copied().unwrap_or(0.0);
        groups.insert(g.clone(), t - b);
    }
    ComparisonRow {
        name: name.to_string(),
        groups,
        average: treated.average - baseline.average,
    }
}

/// Pairs every treated run with its named baseline.
pub fn comparison_report(runs: &[NamedRun]) -> Result<ComparisonReport> {
    let mut pairs = Vec::new();
    for run in runs {
        let Some(base_name) = &run.baseline else { continue };
        let base = runs
            .iter()
            .find(|r| &r.name == base_name)
            .ok_or_else(|| Error::Input(format!("run {:?} names unknown baseline {base_name:?}", run.name)))?;
        let baseline = row(&base.name, &base.report);
        let treated = row(&run.name, &run.report);
        let delta = delta_row(&format!("delta ({})", run.name), &baseline, &treated);
        pairs.push(ComparisonPair {
            baseline,
            treated,
            delta,
        });
    }
    if pairs.is_empty() {
        return Err(Error::Input("no treated run names a baseline".into()));
    }
    let mut groups: Vec<String> = pairs
        .iter()
        .flat_map(|p| p.baseline.groups.keys().chain(p.treated.groups.keys()).cloned())
        .collect();
    groups.sort();
    groups.dedup();
    Ok(ComparisonReport {
        groups,
        pairs,
        config: serde_json::Value::Null,
    })
}

impl ComparisonReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(json_err)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("bad comparison report: {e}")))
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut header = vec!["model".to_string()];
        header.extend(self.groups.iter().cloned());
        header.push("avg".into());
        let mut rows = vec![header];
        for p in &self.pairs {
            for (r, signed) in [(&p.baseline, false), (&p.treated, false), (&p.delta, true)] {
                let fmt = |v: f64| if signed { format!("{v:+.2}") } else { format!("{v:.2}") };
                let mut cells = vec![r.name.clone()];
                cells.extend(self.groups.iter().map(|g| r.groups.get(g).map_or("-".into(), |&v| fmt(v))));
                cells.push(fmt(r.average));
                rows.push(cells);
            }
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            for (c, cell) in r.iter().enumerate() {
                if c == 0 {
                    write!(out, "{cell:<w$}", w = widths[c]).unwrap();
                } else {
                    write!(out, "  {cell:>w$}", w = widths[c]).unwrap();
                }
            }
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out
    }
}
