//! Dense real-matrix kernels: pseudoinverse, cosine similarity and a
//! max-stabilized softmax cross-entropy.
//!
//! Everything is `f64`. Matrices are row-major.

use std::ops::Deref;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeftError};

/// Norm below which a vector is considered degenerate for cosine purposes.
pub const MIN_NORM: f64 = 1e-12;

/// Default relative singular-value cutoff for [`pseudoinverse`].
pub const DEFAULT_PINV_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SeftError::shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SeftError::NonFinite(format!(
                "matrix entry ({}, {})",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix from `f32` storage, widening every entry.
    pub fn from_f32(rows: usize, cols: usize, data: &[f32]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&v| v as f64).collect())
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

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(SeftError::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(SeftError::shape("matrix difference of unequal shapes"));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A finite real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SeftError::NonFinite(format!("vector entry {i}")));
        }
        Ok(Self(data))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn scaled(&self, alpha: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * alpha).collect())
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Moore–Penrose pseudoinverse via SVD. Singular values below
/// `tol * sigma_max` are treated as zero.
pub fn pseudoinverse(m: &Matrix, tol: f64) -> Result<Matrix> {
    if m.rows == 0 || m.cols == 0 {
        return Err(SeftError::invalid("pseudoinverse of an empty matrix"));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(SeftError::invalid(format!(
            "relative cutoff must lie in (0, 1), got {tol}"
        )));
    }
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(SeftError::NonFinite("pseudoinverse input".into()));
    }
    let (rows, cols) = (m.rows, m.cols);
    let a = Mat::<f64>::from_fn(rows, cols, |i, j| m.data[i * cols + j]);
    let svd = a.thin_svd().map_err(|e| {
        SeftError::Decomposition(format!("SVD of {rows}x{cols} matrix failed: {e:?}"))
    })?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = rows.min(cols);
    let sigma_max = (0..k).map(|i| s[i]).fold(0.0, f64::max);
    let cutoff = tol * sigma_max;

    // P = V * diag(1/s) * U^T, keeping only singular values above the cutoff.
    let mut out = Matrix::zeros(cols, rows);
    for r in 0..k {
        if s[r] <= cutoff {
            continue;
        }
        let inv = 1.0 / s[r];
        for i in 0..cols {
            let vi = v[(i, r)] * inv;
            let row = &mut out.data[i * rows..(i + 1) * rows];
            for (j, o) in row.iter_mut().enumerate() {
                *o += vi * u[(j, r)];
            }
        }
    }
    if out.data.iter().any(|v| !v.is_finite()) {
        return Err(SeftError::Decomposition(
            "pseudoinverse produced non-finite entries".into(),
        ));
    }
    Ok(out)
}

/// Cosine similarity clamped to `[-1, 1]`.
///
/// Either operand with norm below [`MIN_NORM`] is rejected rather than
/// mapped to an arbitrary value.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SeftError::shape(format!(
            "cosine of vectors with dims {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = dot(a, a);
    let nb = dot(b, b);
    if na.sqrt() < MIN_NORM || nb.sqrt() < MIN_NORM {
        return Err(SeftError::Degenerate(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    // sqrt(na * nb) rather than sqrt(na) * sqrt(nb): for a == b this is exactly 1.
    let cos = dot(a, b) / (na * nb).sqrt();
    Ok(cos.clamp(-1.0, 1.0))
}

/// Softmax probabilities with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// `-ln softmax(logits)[label]`, stabilized by subtracting the max logit.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(SeftError::IndexOutOfRange {
            what: "logits",
            index: label,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    Ok((log_sum - (logits[label] - max)).max(0.0))
}
