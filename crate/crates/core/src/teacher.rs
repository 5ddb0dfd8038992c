//! Two-layer GCN teacher with average pooling and an MLP head.
//!
//! Forward pass for one subgraph with normalized adjacency `Â` and node
//! features `X`:
//!
//! ```text
//! H1 = relu(Â X W0)
//! H2 = Â H1 W1
//! p  = mean over nodes of H2
//! logits = relu(p Wa + ba) Wb + bb
//! ```

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::Subgraph;
use crate::layers::{average_pool, gcn_layer, glorot, linear};
use crate::metrics::micro_f1;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::tape::{Activation, Tape, Var};
use crate::tensor::Tensor;

pub const TEACHER_MODEL: &str = "teacher";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub dim: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub classes: usize,
    pub seed: u64,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    /// Echo of the graph-construction settings the teacher was trained on.
    #[serde(default)]
    pub graph: serde_json::Value,
}

impl TeacherConfig {
    pub fn new(dim: usize, classes: usize) -> Self {
        TeacherConfig {
            dim,
            hidden: 64,
            head_hidden: 64,
            classes,
            seed: 0,
            epochs: 30,
            optimizer: OptimizerConfig::default(),
            graph: serde_json::Value::Null,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.head_hidden == 0 {
            return Err(Error::Config("teacher dimensions must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherParams {
    pub w0: Tensor,
    pub w1: Tensor,
    pub head_w1: Tensor,
    pub head_b1: Tensor,
    pub head_w2: Tensor,
    pub head_b2: Tensor,
}

const PARAM_NAMES: [&str; 6] = ["gcn.w0", "gcn.w1", "head.w1", "head.b1", "head.w2", "head.b2"];

impl TeacherParams {
    pub fn init(config: &TeacherConfig, rng: &mut ChaCha8Rng) -> Self {
        TeacherParams {
            w0: glorot(rng, config.dim, config.hidden),
            w1: glorot(rng, config.hidden, config.hidden),
            head_w1: glorot(rng, config.hidden, config.head_hidden),
            head_b1: Tensor::zeros(1, config.head_hidden),
            head_w2: glorot(rng, config.head_hidden, config.classes),
            head_b2: Tensor::zeros(1, config.classes),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        [&self.w0, &self.w1, &self.head_w1, &self.head_b1, &self.head_w2, &self.head_b2]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w0,
            &mut self.w1,
            &mut self.head_w1,
            &mut self.head_b1,
            &mut self.head_w2,
            &mut self.head_b2,
        ]
    }

    fn check_shapes(&self, c: &TeacherConfig) -> Result<()> {
        let expected = [
            (c.dim, c.hidden),
            (c.hidden, c.hidden),
            (c.hidden, c.head_hidden),
            (1, c.head_hidden),
            (c.head_hidden, c.classes),
            (1, c.classes),
        ];
        for (t, e) in self.tensors().iter().zip(expected) {
            if t.shape() != e {
                return Err(Error::Config(format!("teacher tensor has shape {:?}, expected {e:?}", t.shape())));
            }
        }
        Ok(())
    }
}

/// Parameter handles recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TeacherVars {
    pub w0: Var,
    pub w1: Var,
    pub head_w1: Var,
    pub head_b1: Var,
    pub head_w2: Var,
    pub head_b2: Var,
}

impl TeacherVars {
    pub fn record(tape: &mut Tape, params: &TeacherParams) -> Self {
        Self::from_slice(&params.tensors().map(|t| tape.leaf(t.clone())))
    }

    pub fn from_slice(v: &[Var]) -> Self {
        TeacherVars {
            w0: v[0],
            w1: v[1],
            head_w1: v[2],
            head_b1: v[3],
            head_w2: v[4],
            head_b2: v[5],
        }
    }

    pub fn all(&self) -> [Var; 6] {
        [self.w0, self.w1, self.head_w1, self.head_b1, self.head_w2, self.head_b2]
    }
}

/// `linear → relu → linear` over a pooled 1×hidden row.
pub fn mlp_head(tape: &mut Tape, pooled: Var, vars: &TeacherVars) -> Result<Var> {
    let h = linear(tape, pooled, vars.head_w1, vars.head_b1)?;
    let h = tape.relu(h)?;
    linear(tape, h, vars.head_w2, vars.head_b2)
}

/// Pooled graph representation (before the head).
pub fn pooled_embedding(tape: &mut Tape, vars: &TeacherVars, a_hat: Var, x: Var) -> Result<Var> {
    let h1 = gcn_layer(tape, a_hat, x, vars.w0, Activation::Relu)?;
    let h2 = gcn_layer(tape, a_hat, h1, vars.w1, Activation::Identity)?;
    average_pool(tape, h2)
}

pub fn teacher_logits(tape: &mut Tape, vars: &TeacherVars, a_hat: Var, x: Var) -> Result<Var> {
    let pooled = pooled_embedding(tape, vars, a_hat, x)?;
    mlp_head(tape, pooled, vars)
}

/// Cross-entropy of the teacher's prediction for one graph.
pub fn teacher_loss(tape: &mut Tape, vars: &TeacherVars, a_hat: Var, x: Var, label: usize) -> Result<Var> {
    let logits = teacher_logits(tape, vars, a_hat, x)?;
    tape.cross_entropy(logits, label)
}

/// A subgraph prepared for the forward pass.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub a_hat: Tensor,
    pub features: Tensor,
    pub label: usize,
}

impl GraphInput {
    pub fn from_subgraph(g: &Subgraph) -> Result<Self> {
        Ok(GraphInput {
            a_hat: g.normalized_adjacency()?,
            features: g.features()?,
            label: g.label,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub config: TeacherConfig,
    pub params: TeacherParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_micro_f1: Option<f64>,
}

impl Teacher {
    pub fn init(config: TeacherConfig) -> Result<(Self, ChaCha8Rng)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = TeacherParams::init(&config, &mut rng);
        Ok((Teacher { config, params }, rng))
    }

    pub fn logits(&self, input: &GraphInput) -> Result<Tensor> {
        if input.features.cols() != self.config.dim {
            return Err(Error::Config(format!(
                "graph features have dim {} but teacher expects {}",
                input.features.cols(),
                self.config.dim
            )));
        }
        let mut tape = Tape::new();
        let vars = TeacherVars::record(&mut tape, &self.params);
        let a = tape.constant(input.a_hat.clone());
        let x = tape.constant(input.features.clone());
        let z = teacher_logits(&mut tape, &vars, a, x)?;
        Ok(tape.value(z).clone())
    }

    pub fn subgraph_logits(&self, g: &Subgraph) -> Result<Tensor> {
        self.logits(&GraphInput::from_subgraph(g)?)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            model: TEACHER_MODEL.into(),
            config: serde_json::to_value(&self.config).map_err(crate::manifest::json_err)?,
            tensors: PARAM_NAMES
                .iter()
                .zip(self.params.tensors())
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.model != TEACHER_MODEL {
            return Err(Error::Config(format!("checkpoint holds a {:?}, not a teacher", ckpt.model)));
        }
        let config: TeacherConfig = serde_json::from_value(ckpt.config.clone())
            .map_err(|e| Error::Config(format!("bad teacher config: {e}")))?;
        let t = |i: usize| ckpt.tensor(PARAM_NAMES[i]).cloned();
        let params = TeacherParams {
            w0: t(0)?,
            w1: t(1)?,
            head_w1: t(2)?,
            head_b1: t(3)?,
            head_w2: t(4)?,
            head_b2: t(5)?,
        };
        params.check_shapes(&config)?;
        Ok(Teacher { config, params })
    }
}

fn check_graphs(graphs: &[&Subgraph], config: &TeacherConfig) -> Result<()> {
    for g in graphs {
        if g.dim() != config.dim {
            return Err(Error::Config(format!(
                "subgraph {} has dim {}, expected {}",
                g.sample_id,
                g.dim(),
                config.dim
            )));
        }
        if g.label >= config.classes {
            return Err(Error::Config(format!(
                "subgraph {} has label {} but only {} classes",
                g.sample_id, g.label, config.classes
            )));
        }
    }
    Ok(())
}

/// Trains a teacher with one optimizer step per graph, visiting the
/// training graphs in a seeded shuffled order each epoch. Returns the
/// final-epoch model and per-epoch metrics.
pub fn train_teacher(
    train: &[&Subgraph],
    val: &[&Subgraph],
    config: TeacherConfig,
) -> Result<(Teacher, Vec<EpochMetrics>)> {
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    check_graphs(train, &config)?;
    check_graphs(val, &config)?;
    let inputs: Vec<GraphInput> = train.iter().map(|g| GraphInput::from_subgraph(g)).collect::<Result<_>>()?;
    let val_inputs: Vec<GraphInput> = val.iter().map(|g| GraphInput::from_subgraph(g)).collect::<Result<_>>()?;

    let (mut teacher, mut rng) = Teacher::init(config)?;
    let mut optimizer = Optimizer::new(teacher.config.optimizer)?;
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(teacher.config.epochs);
    let mut tape = Tape::new();

    for epoch in 1..=teacher.config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let input = &inputs[i];
            tape.clear();
            let vars = TeacherVars::record(&mut tape, &teacher.params);
            let a = tape.constant(input.a_hat.clone());
            let x = tape.constant(input.features.clone());
            let loss = teacher_loss(&mut tape, &vars, a, x, input.label)?;
            total += tape.value(loss).item()?;
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = vars.all().iter().map(|v| grads.take(*v)).collect();
            optimizer.step(&mut teacher.params.tensors_mut(), &grads)?;
        }
        let val_micro_f1 = if val_inputs.is_empty() {
            None
        } else {
            let preds = val_inputs
                .iter()
                .map(|g| Ok(teacher.logits(g)?.row_argmax()[0]))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = val_inputs.iter().map(|g| g.label).collect();
            Some(micro_f1(&preds, &labels)?)
        };
        history.push(EpochMetrics {
            epoch,
            train_loss: total / inputs.len() as f64,
            val_micro_f1,
        });
    }
    Ok((teacher, history))
}
