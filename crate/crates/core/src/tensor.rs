//! Dense row-major 2-D arrays of `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Row-major `rows x cols` matrix. Column and row vectors are `n x 1` and
/// `1 x n`; scalars are `1 x 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Products below this many multiply-adds stay on the calling thread.
const PAR_MATMUL_THRESHOLD: usize = 1 << 16;

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "tensor",
                format!("{} values for shape {rows}x{cols}", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    pub fn column(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(
                    "from_rows",
                    format!("row {i} has {} columns, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a 0-column matrix has no meaningful rows.
        self.data.chunks_exact(self.cols.max(1))
    }

    /// The single value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies rows selected by `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        self.matmul_with(other, Exec::default())
    }

    /// Matrix product; rows of the output are computed in parallel under
    /// [`Exec::Parallel`] when the product is large enough to pay for it.
    pub fn matmul_with(&self, other: &Tensor, exec: Exec) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!(
                    "{}x{} by {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let (n, inner, m) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(n, m);
        if n == 0 || m == 0 {
            return Ok(out);
        }
        let exec = if n * inner * m < PAR_MATMUL_THRESHOLD {
            Exec::Sequential
        } else {
            exec
        };
        exec.fill_chunks(&mut out.data, m, |r, dst| {
            let lhs = &self.data[r * inner..(r + 1) * inner];
            for (k, &a) in lhs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let rhs = &other.data[k * m..(k + 1) * m];
                for (d, &b) in dst.iter_mut().zip(rhs) {
                    *d += a * b;
                }
            }
        });
        Ok(out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Elementwise `f(self, other)` where `other` is the same shape, a row
    /// vector, a column vector or a scalar broadcast against `self`.
    pub fn zip_broadcast(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let (r, c) = self.shape();
        let index: Box<dyn Fn(usize, usize) -> usize> = match other.shape() {
            s if s == (r, c) => Box::new(move |i, j| i * c + j),
            (1, oc) if oc == c => Box::new(|_, j| j),
            (or, 1) if or == r => Box::new(|i, _| i),
            (1, 1) => Box::new(|_, _| 0),
            (or, oc) => {
                return Err(Error::dim(
                    op,
                    format!("cannot broadcast {or}x{oc} against {r}x{c}"),
                ))
            }
        };
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(f(self.data[i * c + j], other.data[index(i, j)]));
            }
        }
        Ok(Self {
            rows: r,
            cols: c,
            data,
        })
    }

    /// Sums `self` down to `shape`, the adjoint of broadcasting.
    pub fn sum_to(&self, shape: (usize, usize)) -> Result<Self> {
        let (r, c) = self.shape();
        match shape {
            s if s == (r, c) => Ok(self.clone()),
            (1, 1) => Ok(Self::scalar(self.sum())),
            (1, sc) if sc == c => {
                let mut out = vec![0.0; c];
                for row in self.iter_rows() {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                Ok(Self::row_vector(out))
            }
            (sr, 1) if sr == r => Ok(Self::column(
                self.iter_rows().map(|row| row.iter().sum()).collect(),
            )),
            (sr, sc) => Err(Error::dim(
                "sum_to",
                format!("cannot reduce {r}x{c} to {sr}x{sc}"),
            )),
        }
    }

    /// Broadcasts a row, column or scalar tensor up to `shape`.
    pub fn broadcast_to(&self, shape: (usize, usize)) -> Result<Self> {
        Self::zeros(shape.0, shape.1).zip_broadcast(self, "broadcast_to", |_, b| b)
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols.max(1)) {
            softmax_in_place(row);
        }
        out
    }

    /// Index of the largest entry per row; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.iter_rows().map(argmax).collect()
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Index of the first maximal element.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
