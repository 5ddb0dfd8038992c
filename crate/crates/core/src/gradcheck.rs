//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Per-coordinate comparison summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().cloned().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.value(loss).item()
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences `(f(θ+eps) − f(θ−eps)) / 2eps`, coordinate by coordinate.
///
/// Returns the maximum of `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn gradcheck<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().cloned().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &vars)?;
    let first = tape.value(loss).item()?;
    let grads = tape.backward(loss)?;
    drop(tape);

    let second = evaluate(&f, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }

    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_err = 0.0f64;
    let mut coordinates = 0;
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).clone();
        for i in 0..work[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let plus = evaluate(&f, &work)?;
            work[p].data_mut()[i] = orig - eps;
            let minus = evaluate(&f, &work)?;
            work[p].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            max_err = max_err.max(err);
            coordinates += 1;
        }
    }
    Ok(GradcheckReport {
        max_rel_error: max_err,
        coordinates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn quadratic_is_exact() {
        let theta = Tensor::scalar(3.0).unwrap();
        let report = gradcheck(
            |tape, p| {
                let sq = tape.matmul(p[0], p[0])?;
                Ok(sq)
            },
            &[theta],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-8, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let theta = Tensor::ones(2, 2);
        let report = gradcheck(
            |tape, _| {
                let c = tape.leaf(Tensor::scalar(4.2)?);
                Ok(c)
            },
            &[theta],
            1e-5,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.coordinates, 4);
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        let counter = Cell::new(0.0);
        let err = gradcheck(
            |tape, p| {
                counter.set(counter.get() + 1.0);
                let s = tape.sum(p[0])?;
                tape.scale(s, counter.get())
            },
            &[Tensor::ones(1, 1)],
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Determinism { .. }));
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let r = gradcheck(|tape, p| tape.sum(p[0]), &[Tensor::ones(1, 1)], 0.0);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
