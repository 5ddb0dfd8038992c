//! Dense row-major `f64` matrices.
//!
//! A [`Tensor`] is an immutable value. Every constructor and public operation
//! checks that the result is finite; arithmetic that overflows into NaN or
//! infinity surfaces as [`Error::NonFinite`] rather than propagating silently.
//! Differentiable versions of these operations live on [`crate::tape::Tape`].

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Tensor::new", (rows, cols), (data.len(), 1)));
        }
        Self::checked(rows, cols, data, "Tensor::new")
    }

    pub(crate) fn checked(rows: usize, cols: usize, data: Vec<f64>, op: &'static str) -> Result<Self> {
        debug_assert_eq!(data.len(), rows * cols);
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 1.0)
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        assert!(value.is_finite(), "Tensor::full with non-finite value");
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(1, 1, vec![value])
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Tensor::from_rows", (rows.len(), cols), (1, r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn row_vector(values: &[f64]) -> Result<Self> {
        Self::new(1, values.len(), values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a 1×1 tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::shape("Tensor::item", self.shape(), (1, 1)));
        }
        Ok(self.data[0])
    }

    /// Overwrites every entry in place. Used by optimizers and finite
    /// differences; the caller is responsible for keeping values finite.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        // i-k-j order; the reduction order over k is fixed.
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Self::checked(m, n, out, "matmul")
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub(crate) fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.cols {
            return Err(Error::shape("matmul", self.shape(), (other.cols, other.rows)));
        }
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &other.data[j * k..(j + 1) * k];
                out.push(a_row.iter().zip(b_row).map(|(a, b)| a * b).sum());
            }
        }
        Self::checked(m, n, out, "matmul")
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub(crate) fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows != other.rows {
            return Err(Error::shape("matmul", (self.cols, self.rows), other.shape()));
        }
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let b_row = &other.data[p * n..(p + 1) * n];
            for i in 0..m {
                let a = self.data[p * m + i];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Self::checked(m, n, out, "matmul")
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Tensor {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self::checked(self.rows, self.cols, data, op)
    }

    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::checked(self.rows, self.cols, data, op)
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        self.map("scale", |v| v * s)
    }

    /// Adds a 1×cols row vector to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(Error::shape("add_row", self.shape(), bias.shape()));
        }
        let data = self
            .data
            .chunks(self.cols.max(1))
            .flat_map(|row| row.iter().zip(&bias.data).map(|(a, b)| a + b))
            .collect::<Vec<_>>();
        Self::checked(self.rows, self.cols, data, "add_row")
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Column-wise mean over rows, a 1×cols result.
    pub fn mean_rows(&self) -> Result<Tensor> {
        if self.rows == 0 {
            return Err(Error::Invariant("mean over zero rows".into()));
        }
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let n = self.rows as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Self::checked(1, self.cols, out, "mean_rows")
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Tensor> {
        if rows * cols != self.data.len() {
            return Err(Error::shape("reshape", self.shape(), (rows, cols)));
        }
        Ok(Tensor {
            rows,
            cols,
            data: self.data.clone(),
        })
    }

    /// Softmax along each row with row-max subtraction.
    pub fn row_softmax(&self) -> Result<Tensor> {
        let mut out = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.cols.max(1)) {
            out.extend(softmax_slice(row));
        }
        Self::checked(self.rows, self.cols, out, "row_softmax")
    }

    /// Index of the largest entry of each row; ties go to the lowest index.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.data
            .chunks(self.cols.max(1))
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Maximum absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::shape("max_abs_diff", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Numerically stable softmax of one row.
pub(crate) fn softmax_slice(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Numerically stable log-softmax of one row.
pub(crate) fn log_softmax_slice(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - lse).collect()
}
