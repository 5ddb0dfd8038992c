//! Soft-label distillation from frozen GCN teachers into raw-feature
//! students.
//!
//! Per training sample the student minimizes
//! `CE(student, label) + λ · KL(P̄ ‖ softmax(student / τ))`, where `P̄` is the
//! mean over teachers of `softmax(teacher / τ)` computed on the sample's full
//! subgraph, and the student only sees the four content embeddings.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{put_short_str, ByteReader};
use crate::error::{Error, Result};
use crate::graph::Subgraph;
use crate::metrics::micro_f1;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::student::{student_logits, Student, StudentKind, StudentShape};
use crate::tape::{Tape, Var};
use crate::teacher::{EpochMetrics, Teacher};
use crate::tensor::{softmax_slice, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub student: StudentKind,
    pub hidden: usize,
    /// Weight λ of the KD term; 0 trains a plain supervised student.
    pub kd_weight: f64,
    pub temperature: f64,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub seed: u64,
}

impl DistillConfig {
    pub fn new(student: StudentKind) -> Self {
        DistillConfig {
            student,
            hidden: 64,
            kd_weight: 1.0,
            temperature: 1.0,
            optimizer: OptimizerConfig::default(),
            epochs: 30,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.kd_weight >= 0.0 && self.kd_weight.is_finite()) {
            return Err(Error::Config(format!("kd weight must be non-negative, got {}", self.kd_weight)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("student hidden width must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// Checks that all teachers agree on input dimension and class count and
/// returns `(dim, classes)`.
pub fn check_teachers(teachers: &[Teacher]) -> Result<(usize, usize)> {
    let first = teachers
        .first()
        .ok_or_else(|| Error::Config("at least one teacher is required".into()))?;
    let (dim, classes) = (first.config.dim, first.config.classes);
    for t in teachers {
        if t.config.dim != dim || t.config.classes != classes {
            return Err(Error::Config(format!(
                "teachers disagree: dim {}/{} classes {}/{}",
                t.config.dim, dim, t.config.classes, classes
            )));
        }
    }
    Ok((dim, classes))
}

/// Mean over teachers of `softmax(logits / temperature)` for one subgraph.
pub fn teacher_soft_labels(teachers: &[Teacher], graph: &Subgraph, temperature: f64) -> Result<Tensor> {
    let (dim, classes) = check_teachers(teachers)?;
    if graph.dim() != dim {
        return Err(Error::Config(format!(
            "subgraph {} has dim {} but teachers expect {dim}",
            graph.sample_id,
            graph.dim()
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let input = crate::teacher::GraphInput::from_subgraph(graph)?;
    let mut mean = vec![0.0; classes];
    for t in teachers {
        let logits = t.logits(&input)?;
        let scaled: Vec<f64> = logits.data().iter().map(|v| v / temperature).collect();
        for (m, p) in mean.iter_mut().zip(softmax_slice(&scaled)) {
            *m += p;
        }
    }
    let n = teachers.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Tensor::row_vector(&mean)
}

/// `KL(p ‖ softmax(logits / τ))`, times `τ²` when `τ ≠ 1`.
pub fn kd_loss(p_teacher: &[f64], student_logits: &[f64], temperature: f64) -> Result<f64> {
    if p_teacher.len() != student_logits.len() {
        return Err(Error::shape("kd_loss", (1, p_teacher.len()), (1, student_logits.len())));
    }
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::row_vector(student_logits)?);
    let l = tape.kl_div(p_teacher, z, temperature)?;
    tape.value(l).item()
}

/// `L = l_sce + λ · l_kd` on the tape.
pub fn combined_loss(tape: &mut Tape, l_sce: Var, l_kd: Var, kd_weight: f64) -> Result<Var> {
    let weighted = tape.scale(l_kd, kd_weight)?;
    tape.add(l_sce, weighted)
}

/// Scalar version of [`combined_loss`].
pub fn combined_loss_value(l_sce: f64, l_kd: f64, kd_weight: f64) -> f64 {
    l_sce + kd_weight * l_kd
}

/// Loss for one sample as built during training.
pub fn student_loss(
    tape: &mut Tape,
    kind: StudentKind,
    params: &[Var],
    content: Var,
    label: usize,
    soft: Option<&[f64]>,
    config: &DistillConfig,
) -> Result<Var> {
    let logits = student_logits(tape, kind, params, content)?;
    let ce = tape.cross_entropy(logits, label)?;
    match soft {
        Some(p) if config.kd_weight > 0.0 => {
            let kd = tape.kl_div(p, logits, config.temperature)?;
            combined_loss(tape, ce, kd, config.kd_weight)
        }
        _ => Ok(ce),
    }
}

/// Teacher soft labels for every graph, in input order.
pub fn precompute_soft_labels(teachers: &[Teacher], graphs: &[&Subgraph], temperature: f64) -> Result<Vec<Vec<f64>>> {
    graphs
        .par_iter()
        .map(|g| Ok(teacher_soft_labels(teachers, g, temperature)?.into_data()))
        .collect()
}

/// Trains a student. With `kd_weight = 0` teachers are never consulted and
/// the result equals [`train_supervised`] for the same configuration.
/// Teachers are borrowed immutably and never updated.
pub fn train_student(
    train: &[&Subgraph],
    val: &[&Subgraph],
    teachers: &[Teacher],
    config: &DistillConfig,
) -> Result<(Student, Vec<EpochMetrics>)> {
    config.validate()?;
    let soft = if config.kd_weight > 0.0 {
        Some(precompute_soft_labels(teachers, train, config.temperature)?)
    } else {
        None
    };
    let classes = match teachers.first() {
        Some(_) => check_teachers(teachers)?.1,
        None => infer_classes(train, val)?,
    };
    train_with_soft_labels(train, val, soft.as_deref(), classes, config)
}

/// Plain cross-entropy training of a student on content embeddings.
pub fn train_supervised(
    train: &[&Subgraph],
    val: &[&Subgraph],
    classes: usize,
    config: &DistillConfig,
) -> Result<(Student, Vec<EpochMetrics>)> {
    config.validate()?;
    train_with_soft_labels(train, val, None, classes, config)
}

fn infer_classes(train: &[&Subgraph], val: &[&Subgraph]) -> Result<usize> {
    let max = train
        .iter()
        .chain(val)
        .map(|g| g.label)
        .max()
        .ok_or_else(|| Error::Config("training split is empty".into()))?;
    Ok((max + 1).max(2))
}

/// Training loop over precomputed soft labels (`None` → supervised only).
pub fn train_with_soft_labels(
    train: &[&Subgraph],
    val: &[&Subgraph],
    soft: Option<&[Vec<f64>]>,
    classes: usize,
    config: &DistillConfig,
) -> Result<(Student, Vec<EpochMetrics>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if let Some(s) = soft {
        if s.len() != train.len() || s.iter().any(|p| p.len() != classes) {
            return Err(Error::Config("soft labels do not match the training split".into()));
        }
    }
    let dim = train[0].dim();
    let inputs: Vec<(Tensor, usize)> = train
        .iter()
        .chain(val)
        .map(|g| {
            if g.dim() != dim {
                return Err(Error::Config(format!("subgraph {} has dim {}, expected {dim}", g.sample_id, g.dim())));
            }
            if g.label >= classes {
                return Err(Error::Label {
                    label: g.label,
                    classes,
                });
            }
            Ok((g.content_features()?, g.label))
        })
        .collect::<Result<_>>()?;
    let (train_inputs, val_inputs) = inputs.split_at(train.len());

    let shape = StudentShape {
        kind: config.student,
        dim,
        hidden: config.hidden,
        classes,
    };
    let (mut student, mut rng) = Student::init(shape, config.seed);
    student.config = serde_json::to_value(config).map_err(crate::manifest::json_err)?;
    let mut optimizer = Optimizer::new(config.optimizer)?;
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut tape = Tape::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (content, label) = &train_inputs[i];
            tape.clear();
            let vars = student.record(&mut tape);
            let x = tape.constant(content.clone());
            let p = soft.map(|s| s[i].as_slice());
            let loss = student_loss(&mut tape, config.student, &vars, x, *label, p, config)?;
            total += tape.value(loss).item()?;
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|v| grads.take(*v)).collect();
            let mut params: Vec<&mut Tensor> = student.params.iter_mut().collect();
            optimizer.step(&mut params, &grads)?;
        }
        let val_micro_f1 = if val_inputs.is_empty() {
            None
        } else {
            let preds = val_inputs
                .iter()
                .map(|(x, _)| Ok(student.logits(x)?.row_argmax()[0]))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = val_inputs.iter().map(|(_, l)| *l).collect();
            Some(micro_f1(&preds, &labels)?)
        };
        history.push(EpochMetrics {
            epoch,
            train_loss: total / train_inputs.len() as f64,
            val_micro_f1,
        });
    }
    Ok((student, history))
}

const CACHE_MAGIC: &[u8; 4] = b"GSLB";
const CACHE_VERSION: u32 = 1;

/// Cached teacher soft labels keyed by sample id (`GSLB` format):
///
/// ```text
/// "GSLB" | version u32 | count u64 | classes u32 |
///   count × ( id_len u16 | id utf-8 | classes × f64 )
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelCache {
    pub classes: usize,
    pub entries: Vec<(String, Vec<f64>)>,
}

impl SoftLabelCache {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(20 + self.entries.len() * (16 + self.classes * 8));
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        let classes = u32::try_from(self.classes).map_err(|_| Error::Input("class count exceeds u32".into()))?;
        out.extend_from_slice(&classes.to_le_bytes());
        for (id, probs) in &self.entries {
            if probs.len() != self.classes {
                return Err(Error::shape("SoftLabelCache", (1, self.classes), (1, probs.len())));
            }
            put_short_str(&mut out, id)?;
            for p in probs {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(CACHE_MAGIC)?;
        r.version(CACHE_VERSION)?;
        let count = r.u64("count")?;
        let classes = r.u32("classes")? as usize;
        let mut entries = Vec::new();
        for _ in 0..count {
            let id = r.short_str("sample id")?;
            let at = r.offset();
            let probs = (0..classes).map(|_| r.f64("probability")).collect::<Result<Vec<_>>>()?;
            if probs.iter().any(|p| !p.is_finite()) {
                return Err(Error::format(at, "non-finite probability"));
            }
            entries.push((id, probs));
        }
        r.finish()?;
        Ok(SoftLabelCache { classes, entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kd_loss_examples() {
        let l = kd_loss(&[1.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-6);
        let logits = [0.3, -1.2, 2.0];
        let p = softmax_slice(&logits);
        assert!(kd_loss(&p, &logits, 1.0).unwrap().abs() < 1e-12);
        assert!(matches!(kd_loss(&[0.5, 0.5], &[0.0; 3], 1.0), Err(Error::Shape { .. })));
    }

    #[test]
    fn kd_loss_temperature_scaling() {
        let p = [0.7, 0.2, 0.1];
        let z = [1.0, 0.5, -2.0];
        let t = 2.5;
        let q = softmax_slice(&z.map(|v| v / t));
        let kl: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
        assert!((kd_loss(&p, &z, t).unwrap() - t * t * kl).abs() < 1e-12);
    }

    #[test]
    fn combined_loss_examples() {
        assert_eq!(combined_loss_value(0.5, 0.25, 1.0), 0.75);
        assert_eq!(combined_loss_value(0.5, 0.25, 0.0), 0.5);
        assert_eq!(combined_loss_value(0.5, 0.0, 1.0), 0.5);
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(0.5).unwrap());
        let b = tape.leaf(Tensor::scalar(0.25).unwrap());
        let l = combined_loss(&mut tape, a, b, 1.0).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.75);
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let cache = SoftLabelCache {
            classes: 3,
            entries: vec![("s0".into(), vec![0.2, 0.3, 0.5]), ("s1".into(), vec![1.0 / 3.0; 3])],
        };
        let bytes = cache.to_bytes().unwrap();
        let back = SoftLabelCache::from_bytes(&bytes).unwrap();
        assert_eq!(back, cache);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let mut bad = bytes.clone();
        bad[3] = 0;
        assert!(matches!(SoftLabelCache::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(
            SoftLabelCache::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
    }
}
