//! Raw-feature students: they see only the four content-node embeddings of
//! a sample, never commonsense nodes or edges.
//!
//! * `mlp`: the four embeddings concatenated (1×4·dim) → linear → relu →
//!   linear.
//! * `transformer`: the embeddings as a 4-token sequence plus learned
//!   per-kind embeddings, one single-head self-attention block with a
//!   residual connection, a residual position-wise feed-forward block, mean
//!   over tokens, and a linear classifier. No normalization layers.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::layers::{glorot, linear};
use crate::manifest::json_err;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Tokens per sample: question, language context, visual context, V-L.
pub const TOKENS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudentKind {
    Mlp,
    Transformer,
}

impl StudentKind {
    pub fn model_name(self) -> &'static str {
        match self {
            StudentKind::Mlp => "student-mlp",
            StudentKind::Transformer => "student-transformer",
        }
    }

    fn param_names(self) -> &'static [&'static str] {
        match self {
            StudentKind::Mlp => &["mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"],
            StudentKind::Transformer => &[
                "tf.kind_embedding",
                "tf.wq",
                "tf.wk",
                "tf.wv",
                "tf.wo",
                "tf.ff_w1",
                "tf.ff_b1",
                "tf.ff_w2",
                "tf.ff_b2",
                "tf.out_w",
                "tf.out_b",
            ],
        }
    }
}

impl fmt::Display for StudentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudentKind::Mlp => "mlp",
            StudentKind::Transformer => "transformer",
        })
    }
}

impl FromStr for StudentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(StudentKind::Mlp),
            "transformer" | "tiny-transformer" => Ok(StudentKind::Transformer),
            other => Err(Error::Config(format!("unknown student kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentShape {
    pub kind: StudentKind,
    pub dim: usize,
    /// MLP hidden width, or the transformer feed-forward width.
    pub hidden: usize,
    pub classes: usize,
}

impl StudentShape {
    fn param_shapes(&self) -> Vec<(usize, usize)> {
        let (d, h, c) = (self.dim, self.hidden, self.classes);
        match self.kind {
            StudentKind::Mlp => vec![(TOKENS * d, h), (1, h), (h, c), (1, c)],
            StudentKind::Transformer => vec![
                (TOKENS, d),
                (d, d),
                (d, d),
                (d, d),
                (d, d),
                (d, h),
                (1, h),
                (h, d),
                (1, d),
                (d, c),
                (1, c),
            ],
        }
    }

    /// Seeded Glorot weights, zero biases.
    pub fn init(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        self.param_shapes()
            .into_iter()
            .map(|(r, c)| {
                // Single-row parameters are biases.
                if r == 1 {
                    Tensor::zeros(r, c)
                } else {
                    glorot(rng, r, c)
                }
            })
            .collect()
    }
}

/// Forward pass from a 4×dim content matrix to 1×classes logits.
pub fn student_logits(tape: &mut Tape, kind: StudentKind, params: &[Var], x: Var) -> Result<Var> {
    let (rows, dim) = tape.shape(x);
    if rows != TOKENS {
        return Err(Error::shape("student_forward", (rows, dim), (TOKENS, dim)));
    }
    match kind {
        StudentKind::Mlp => {
            let flat = tape.reshape(x, 1, TOKENS * dim)?;
            let h = linear(tape, flat, params[0], params[1])?;
            let h = tape.relu(h)?;
            linear(tape, h, params[2], params[3])
        }
        StudentKind::Transformer => {
            let (h1, _) = attention_block(tape, params, x)?;
            let f = linear(tape, h1, params[5], params[6])?;
            let f = tape.relu(f)?;
            let f = linear(tape, f, params[7], params[8])?;
            let h2 = tape.add(h1, f)?;
            let pooled = tape.mean_rows(h2)?;
            linear(tape, pooled, params[9], params[10])
        }
    }
}

/// Self-attention with residual; returns the block output and the 4×4
/// attention weights.
fn attention_block(tape: &mut Tape, params: &[Var], x: Var) -> Result<(Var, Var)> {
    let dim = tape.shape(x).1;
    let x0 = tape.add(x, params[0])?;
    let q = tape.matmul(x0, params[1])?;
    let k = tape.matmul(x0, params[2])?;
    let v = tape.matmul(x0, params[3])?;
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dim as f64).sqrt())?;
    let attn = tape.row_softmax(scores)?;
    let mixed = tape.matmul(attn, v)?;
    let out = tape.matmul(mixed, params[4])?;
    Ok((tape.add(x0, out)?, attn))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Student {
    pub shape: StudentShape,
    pub params: Vec<Tensor>,
    /// Training configuration echo stored with the checkpoint.
    pub config: serde_json::Value,
}

impl Student {
    pub fn init(shape: StudentShape, seed: u64) -> (Self, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = shape.init(&mut rng);
        (
            Student {
                shape,
                params,
                config: serde_json::Value::Null,
            },
            rng,
        )
    }

    pub fn kind(&self) -> StudentKind {
        self.shape.kind
    }

    pub fn record(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    pub fn logits(&self, content: &Tensor) -> Result<Tensor> {
        if content.cols() != self.shape.dim {
            return Err(Error::Config(format!(
                "content embeddings have dim {} but student expects {}",
                content.cols(),
                self.shape.dim
            )));
        }
        let mut tape = Tape::new();
        let vars = self.record(&mut tape);
        let x = tape.constant(content.clone());
        let z = student_logits(&mut tape, self.kind(), &vars, x)?;
        Ok(tape.value(z).clone())
    }

    /// Attention weights of the transformer student for one input.
    pub fn attention_weights(&self, content: &Tensor) -> Result<Tensor> {
        if self.kind() != StudentKind::Transformer {
            return Err(Error::Config("attention weights exist only for the transformer student".into()));
        }
        let mut tape = Tape::new();
        let vars = self.record(&mut tape);
        let x = tape.constant(content.clone());
        let (_, attn) = attention_block(&mut tape, &vars, x)?;
        Ok(tape.value(attn).clone())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let config = serde_json::json!({
            "shape": serde_json::to_value(&self.shape).map_err(json_err)?,
            "training": self.config,
        });
        Ok(Checkpoint {
            model: self.kind().model_name().into(),
            config,
            tensors: self
                .kind()
                .param_names()
                .iter()
                .zip(&self.params)
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let shape: StudentShape = serde_json::from_value(ckpt.config["shape"].clone())
            .map_err(|e| Error::Config(format!("bad student config: {e}")))?;
        if ckpt.model != shape.kind.model_name() {
            return Err(Error::Config(format!("checkpoint holds a {:?}, not a student", ckpt.model)));
        }
        let params = shape
            .kind
            .param_names()
            .iter()
            .zip(shape.param_shapes())
            .map(|(name, expected)| {
                let t = ckpt.tensor(name)?;
                if t.shape() != expected {
                    return Err(Error::Config(format!("{name} has shape {:?}, expected {expected:?}", t.shape())));
                }
                Ok(t.clone())
            })
            .collect::<Result<_>>()?;
        Ok(Student {
            shape,
            params,
            config: ckpt.config["training"].clone(),
        })
    }
}
