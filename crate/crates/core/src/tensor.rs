//! Dense row-major `f64` matrices and the handful of kernels the attention
//! mechanisms need: products, masked softmax, cosine similarity, a
//! zero-padded 2-D cross-correlation and affine maps.
//!
//! Every operation is a pure function of its inputs.

use std::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("{op}: {msg}")]
    Numeric { op: &'static str, msg: String },
    #[error("conv2d: kernel must have odd dimensions, got {rows}x{cols}")]
    EvenKernel { rows: usize, cols: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0x0
    /// matrix; use [`Matrix::zeros`] for `0 x d`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(TensorError::DimensionMismatch {
                    op: "from_rows",
                    left: (0, cols),
                    right: (i, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        self.map(|v| v * factor)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn zip_with(
        &self,
        op: &'static str,
        other: &Matrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(TensorError::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Stacks matrices along the row axis. All inputs must share a column
    /// count; `cols` fixes it when the list may be empty.
    pub fn vstack(parts: &[&Matrix], cols: usize) -> Result<Matrix> {
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(TensorError::DimensionMismatch {
                    op: "vstack",
                    left: (rows, cols),
                    right: p.shape(),
                });
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Matrix::new(rows, cols, data)
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(TensorError::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `a * b^T` without materialising the transpose.
pub fn matmul_transposed(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(TensorError::DimensionMismatch {
            op: "matmul_transposed",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(Matrix::from_fn(a.rows, b.rows, |i, j| dot(a.row(i), b.row(j))))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Softmax along each row. `-inf` entries receive exactly zero weight and a
/// row that is entirely `-inf` becomes uniform.
pub fn row_softmax(m: &Matrix) -> Result<Matrix> {
    if m.data.iter().any(|v| v.is_nan()) {
        return Err(TensorError::Numeric {
            op: "row_softmax",
            msg: "NaN in input".into(),
        });
    }
    let mut out = Matrix::zeros(m.rows, m.cols);
    for r in 0..m.rows {
        let row = m.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = out.row_mut(r);
        if max == f64::NEG_INFINITY {
            let uniform = 1.0 / row.len() as f64;
            dst.iter_mut().for_each(|v| *v = uniform);
            continue;
        }
        if max == f64::INFINITY {
            return Err(TensorError::Numeric {
                op: "row_softmax",
                msg: format!("+inf in row {r}"),
            });
        }
        let mut sum = 0.0;
        for (d, &x) in dst.iter_mut().zip(row) {
            // exp(-inf) is exactly 0
            *d = (x - max).exp();
            sum += *d;
        }
        dst.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Pairwise cosine similarity between the rows of `a` and the rows of `b`.
/// A zero-norm row is treated as unrelated to everything (similarity 0).
pub fn cosine_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(TensorError::DimensionMismatch {
            op: "cosine_matrix",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let a_norms: Vec<f64> = a.row_iter().map(norm).collect();
    let b_norms: Vec<f64> = b.row_iter().map(norm).collect();
    Ok(Matrix::from_fn(a.rows, b.rows, |i, j| {
        let denom = a_norms[i] * b_norms[j];
        if denom == 0.0 {
            0.0
        } else {
            (dot(a.row(i), b.row(j)) / denom).clamp(-1.0, 1.0)
        }
    }))
}

/// 2-D cross-correlation with zero padding; output has the input's shape.
pub fn conv2d(input: &Matrix, kernel: &Matrix) -> Result<Matrix> {
    let (kr, kc) = kernel.shape();
    if kr % 2 == 0 || kc % 2 == 0 {
        return Err(TensorError::EvenKernel { rows: kr, cols: kc });
    }
    let (hr, hc) = ((kr / 2) as isize, (kc / 2) as isize);
    let (rows, cols) = (input.rows as isize, input.cols as isize);
    Ok(Matrix::from_fn(input.rows, input.cols, |r, c| {
        let mut acc = 0.0;
        for dr in -hr..=hr {
            let y = r as isize + dr;
            if y < 0 || y >= rows {
                continue;
            }
            for dc in -hc..=hc {
                let x = c as isize + dc;
                if x < 0 || x >= cols {
                    continue;
                }
                acc += input.get(y as usize, x as usize)
                    * kernel.get((dr + hr) as usize, (dc + hc) as usize);
            }
        }
        acc
    }))
}

/// `x * weight + bias`, with the `1 x out` bias broadcast over rows.
pub fn affine(x: &Matrix, weight: &Matrix, bias: &Matrix) -> Result<Matrix> {
    if bias.rows != 1 || bias.cols != weight.cols {
        return Err(TensorError::DimensionMismatch {
            op: "affine(bias)",
            left: weight.shape(),
            right: bias.shape(),
        });
    }
    let mut out = matmul(x, weight)?;
    for r in 0..out.rows {
        for (o, b) in out.row_mut(r).iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    Ok(out)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Seed for every deterministic initialisation in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Independent ChaCha8 stream for `label`. The same `(seed, label)` pair
    /// always yields the same sequence, on every platform.
    pub fn stream(self, label: &str) -> SeededStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(fnv1a(label.as_bytes()));
        SeededStream { rng }
    }

    /// Uniform `rows x cols` matrix in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform_matrix(self, label: &str, rows: usize, cols: usize, fan_in: usize) -> Matrix {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut s = self.stream(label);
        Matrix::from_fn(rows, cols, |_, _| s.uniform(-bound, bound))
    }
}

pub struct SeededStream {
    rng: ChaCha8Rng,
}

impl SeededStream {
    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.unit() * n as f64) as usize % n.max(1)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
