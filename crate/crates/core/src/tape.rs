//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation applied to tracked values in
//! execution order, so records are already topologically sorted. Calling
//! [`Tape::backward`] walks the records once in reverse, accumulating
//! gradients additively when a value feeds several consumers.
//!
//! A fresh tape is built for every optimization step:
//!
//! ```
//! use graphkd::tape::Tape;
//! use graphkd::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
//! let loss = tape.sum(w).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w), &Tensor::ones(2, 2));
//! ```

use crate::error::{Error, Result};
use crate::tensor::{log_softmax_slice, softmax_slice, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Transpose(Var),
    RowSoftmax(Var),
    MeanRows(Var),
    Reshape(Var),
    Sum(Var),
    /// Saved: softmax of the logits row.
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
    /// Saved: target row, temperature, student softmax at that temperature.
    KlDiv { logits: Var, target: Vec<f64>, temperature: f64, probs: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Record {
    op: Op,
    value: Tensor,
    /// Whether any parameter leaf feeds this value.
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
}

/// Gradient of a scalar loss with respect to every recorded value.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> &Tensor {
        &self.grads[var.0]
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        let shape = self.grads[var.0].shape();
        std::mem::replace(&mut self.grads[var.0], Tensor::zeros(shape.0, shape.1))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.records[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.value(var).shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let tracked = match &op {
            Op::Leaf => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) => self.tracked(*a) || self.tracked(*b),
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Transpose(a)
            | Op::RowSoftmax(a)
            | Op::MeanRows(a)
            | Op::Reshape(a)
            | Op::Sum(a) => self.tracked(*a),
            Op::CrossEntropy { logits, .. } | Op::KlDiv { logits, .. } => self.tracked(*logits),
        };
        self.records.push(Record { op, value, tracked });
        Var(self.records.len() - 1)
    }

    fn tracked(&self, var: Var) -> bool {
        self.records[var.0].tracked
    }

    /// Records a parameter: an input that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Records an input that needs no gradient. Its gradient, and that of
    /// values computed only from constants, is reported as zero.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.records.push(Record {
            op: Op::Leaf,
            value,
            tracked: false,
        });
        Var(self.records.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    /// Adds a 1×n bias row to every row of an m×n value.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(bias))?;
        Ok(self.push(Op::AddRow(a, bias), v))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).scale(s)?;
        Ok(self.push(Op::Scale(a, s), v))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map("relu", |x| if x > 0.0 { x } else { 0.0 })?;
        Ok(self.push(Op::Relu(a), v))
    }

    pub fn activate(&mut self, a: Var, activation: Activation) -> Result<Var> {
        match activation {
            Activation::Relu => self.relu(a),
            Activation::Identity => Ok(a),
        }
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).row_softmax()?;
        Ok(self.push(Op::RowSoftmax(a), v))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mean_rows()?;
        Ok(self.push(Op::MeanRows(a), v))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a).reshape(rows, cols)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum())?;
        Ok(self.push(Op::Sum(a), v))
    }

    /// `-log softmax(logits)[label]` for a 1×C logits row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != 1 {
            return Err(Error::shape("cross_entropy", z.shape(), (1, z.cols())));
        }
        if label >= z.cols() {
            return Err(Error::Label {
                label,
                classes: z.cols(),
            });
        }
        let loss = -log_softmax_slice(z.data())[label];
        let probs = softmax_slice(z.data());
        let v = Tensor::scalar(loss)?;
        Ok(self.push(Op::CrossEntropy { logits, label, probs }, v))
    }

    /// `KL(target || softmax(logits / temperature))`, scaled by
    /// `temperature²` when the temperature differs from 1. Entries of the
    /// target equal to zero contribute nothing.
    pub fn kl_div(&mut self, target: &[f64], logits: Var, temperature: f64) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != 1 || z.cols() != target.len() {
            return Err(Error::shape("kl_div", (1, target.len()), z.shape()));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        let scaled: Vec<f64> = z.data().iter().map(|v| v / temperature).collect();
        let log_q = log_softmax_slice(&scaled);
        let probs = softmax_slice(&scaled);
        let mut loss = 0.0;
        for (&p, &lq) in target.iter().zip(&log_q) {
            if p > 0.0 {
                loss += p * (p.ln() - lq);
            }
        }
        if temperature != 1.0 {
            loss *= temperature * temperature;
        }
        let v = Tensor::scalar(loss)?;
        Ok(self.push(
            Op::KlDiv {
                logits,
                target: target.to_vec(),
                temperature,
                probs,
            },
            v,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    /// Values the loss does not depend on receive zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::shape("backward", shape, (1, 1)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(1, 1));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.records[idx].tracked {
                continue;
            }
            let record = &self.records[idx];
            match &record.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.tracked(*a) {
                        let ga = g.matmul_nt(self.value(*b))?;
                        accumulate(&mut grads, *a, ga)?;
                    }
                    if self.tracked(*b) {
                        let gb = self.value(*a).matmul_tn(&g)?;
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::AddRow(a, bias) => {
                    let gb = column_sums(&g)?;
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *bias, gb)?;
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)?)?,
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga = g.zip_with(x, "relu'", |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose())?,
                Op::RowSoftmax(a) => {
                    let y = &record.value;
                    let cols = y.cols().max(1);
                    let mut out = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(cols).zip(g.data().chunks(cols)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        out.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                    }
                    let ga = Tensor::checked(y.rows(), y.cols(), out, "row_softmax'")?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = self.shape(*a);
                    let n = rows as f64;
                    let row: Vec<f64> = g.data().iter().map(|v| v / n).collect();
                    let data = row.iter().copied().cycle().take(rows * cols).collect();
                    accumulate(&mut grads, *a, Tensor::checked(rows, cols, data, "mean_rows'")?)?;
                }
                Op::Reshape(a) => {
                    let (rows, cols) = self.shape(*a);
                    accumulate(&mut grads, *a, g.reshape(rows, cols)?)?;
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.shape(*a);
                    accumulate(&mut grads, *a, Tensor::full(rows, cols, g.item()?))?;
                }
                Op::CrossEntropy { logits, label, probs } => {
                    let scale = g.item()?;
                    let data = probs
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| scale * (p - if i == *label { 1.0 } else { 0.0 }))
                        .collect();
                    let ga = Tensor::checked(1, probs.len(), data, "cross_entropy'")?;
                    accumulate(&mut grads, *logits, ga)?;
                }
                Op::KlDiv {
                    logits,
                    target,
                    temperature,
                    probs,
                } => {
                    // d/dz of t²·KL(p || softmax(z/t)) is t·(q − p); with t = 1 the
                    // scale factor is exactly 1.
                    let factor = g.item()? * if *temperature != 1.0 { *temperature } else { 1.0 };
                    let data = probs.iter().zip(target).map(|(q, p)| factor * (q - p)).collect();
                    let ga = Tensor::checked(1, probs.len(), data, "kl_div'")?;
                    accumulate(&mut grads, *logits, ga)?;
                }
            }
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .chain(std::iter::repeat_with(|| None))
            .zip(&self.records)
            .map(|(g, r)| g.unwrap_or_else(|| Tensor::zeros(r.value.rows(), r.value.cols())))
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) -> Result<()> {
    let slot = &mut grads[var.0];
    *slot = Some(match slot.take() {
        Some(existing) => existing.add(&g)?,
        None => g,
    });
    Ok(())
}

fn column_sums(g: &Tensor) -> Result<Tensor> {
    let mut out = vec![0.0; g.cols()];
    for row in g.data().chunks(g.cols().max(1)) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::checked(1, g.cols(), out, "column_sums")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_parameters_gives_exact_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_rows(&[[0.3, -1.2], [4.0, 2.5]]).unwrap());
        let loss = tape.sum(w).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w), &Tensor::ones(2, 2));
        assert_eq!(grads.get(loss), &Tensor::ones(1, 1));
    }

    #[test]
    fn untouched_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::ones(2, 2));
        let x = tape.leaf(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w), &Tensor::zeros(2, 2));
    }

    #[test]
    fn parameters_recorded_after_loss_get_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(1, 3));
        let loss = tape.sum(x).unwrap();
        let late = tape.leaf(Tensor::ones(3, 1));
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(late), &Tensor::zeros(3, 1));
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x + x) -> grad 2
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(2, 3));
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x), &Tensor::full(2, 3, 2.0));
    }

    #[test]
    fn non_scalar_loss_is_shape_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn cross_entropy_values() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(1, 4));
        let l = tape.cross_entropy(z, 2).unwrap();
        assert!((tape.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-6);

        let z = tape.leaf(Tensor::from_rows(&[[3f64.ln(), 0.0]]).unwrap());
        let l = tape.cross_entropy(z, 0).unwrap();
        assert!((tape.value(l).item().unwrap() - 0.2877).abs() < 1e-4);

        let z = tape.leaf(Tensor::from_rows(&[[800.0, -800.0]]).unwrap());
        let l = tape.cross_entropy(z, 0).unwrap();
        assert!(tape.value(l).item().unwrap() < 1e-12);
        let l = tape.cross_entropy(z, 1).unwrap();
        assert!(tape.value(l).item().unwrap().is_finite());
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(1, 3));
        assert!(matches!(tape.cross_entropy(z, 3), Err(Error::Label { label: 3, classes: 3 })));
    }

    #[test]
    fn kl_div_hand_value() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(1, 2));
        let l = tape.kl_div(&[1.0, 0.0], z, 1.0).unwrap();
        assert!((tape.value(l).item().unwrap() - 2f64.ln()).abs() < 1e-12);
    }
}
