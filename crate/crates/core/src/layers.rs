//! Differentiable building blocks shared by the teacher and students.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Activation, Tape, Var};
use crate::tensor::Tensor;

/// `σ(Â · H · W)`.
pub fn gcn_layer(tape: &mut Tape, a_hat: Var, h: Var, w: Var, activation: Activation) -> Result<Var> {
    let (n, n2) = tape.shape(a_hat);
    if n != n2 || tape.shape(h).0 != n {
        return Err(Error::shape("gcn_layer", tape.shape(a_hat), tape.shape(h)));
    }
    let propagated = tape.matmul(a_hat, h)?;
    let z = tape.matmul(propagated, w)?;
    tape.activate(z, activation)
}

/// Column-wise mean over nodes: N×d → 1×d.
pub fn average_pool(tape: &mut Tape, h: Var) -> Result<Var> {
    tape.mean_rows(h)
}

/// `x · W + b` with `b` a 1×out row.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let z = tape.matmul(x, w)?;
    tape.add_row(z, b)
}

/// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(fan_in, fan_out, data).expect("glorot values are finite")
}
