//! Dense row-major `f64` tensors.
//!
//! Only what the flow and its losses need: rank-0/1/2 storage, elementwise
//! maps and a handful of matrix kernels. All reductions run in a fixed order,
//! so identical inputs give bitwise-identical outputs.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// A `1 × n` row.
    pub fn row(values: &[f64]) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equally long rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Row count of a matrix; rank-0/1 tensors count as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = value;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub(crate) fn expect_matrix(&self, op: &'static str) -> Result<()> {
        if self.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: vec![0, 0],
            });
        }
        Ok(())
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.expect_same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| c * v)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn transpose(&self) -> Result<Tensor> {
        self.expect_matrix("transpose")?;
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, out)
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.expect_matrix("matmul")?;
        other.expect_matrix("matmul")?;
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, &self.data, &other.data, &mut out);
        Tensor::matrix(m, n, out)
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        self.expect_matrix("matmul_tn")?;
        other.expect_matrix("matmul_tn")?;
        let (k, m) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_tn",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let brow = &other.data[p * n..(p + 1) * n];
            for i in 0..m {
                let a = self.data[p * m + i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor::matrix(m, n, out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        other.transpose().and_then(|t| self.matmul(&t))
    }

    /// Adds a `1 × n` (or length-`n`) row to every row of a matrix.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        self.expect_matrix("add_row")?;
        let n = self.shape[1];
        if row.numel() != n {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.shape.clone(),
                rhs: row.shape.clone(),
            });
        }
        let mut out = self.data.clone();
        for chunk in out.chunks_mut(n) {
            for (o, &b) in chunk.iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        Tensor::matrix(self.shape[0], n, out)
    }

    /// Multiplies every row of a matrix componentwise by a `1 × n` row.
    pub fn mul_row(&self, row: &Tensor) -> Result<Tensor> {
        self.expect_matrix("mul_row")?;
        let n = self.shape[1];
        if row.numel() != n {
            return Err(Error::ShapeMismatch {
                op: "mul_row",
                lhs: self.shape.clone(),
                rhs: row.shape.clone(),
            });
        }
        let mut out = self.data.clone();
        for chunk in out.chunks_mut(n) {
            for (o, &b) in chunk.iter_mut().zip(&row.data) {
                *o *= b;
            }
        }
        Tensor::matrix(self.shape[0], n, out)
    }

    /// Column sums of a matrix as a `1 × n` row.
    pub fn sum_rows(&self) -> Result<Tensor> {
        self.expect_matrix("sum_rows")?;
        let n = self.shape[1];
        let mut out = vec![0.0; n];
        for chunk in self.data.chunks(n) {
            for (o, &v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        Tensor::matrix(1, n, out)
    }

    /// Row sums of a matrix as an `m × 1` column.
    pub fn sum_cols(&self) -> Result<Tensor> {
        self.expect_matrix("sum_cols")?;
        let n = self.shape[1];
        let out = self.data.chunks(n.max(1)).map(|c| c.iter().sum()).collect::<Vec<f64>>();
        let m = self.shape[0];
        if n == 0 {
            return Tensor::matrix(m, 1, vec![0.0; m]);
        }
        Tensor::matrix(m, 1, out)
    }

    /// Gathers the listed columns of a matrix.
    pub fn select_cols(&self, cols: &[usize]) -> Result<Tensor> {
        self.expect_matrix("select_cols")?;
        let (m, n) = (self.shape[0], self.shape[1]);
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::ShapeMismatch {
                op: "select_cols",
                lhs: self.shape.clone(),
                rhs: vec![bad],
            });
        }
        let mut out = Vec::with_capacity(m * cols.len());
        for r in 0..m {
            let row = &self.data[r * n..(r + 1) * n];
            out.extend(cols.iter().map(|&c| row[c]));
        }
        Tensor::matrix(m, cols.len(), out)
    }

    /// Inverse of [`select_cols`](Self::select_cols) for a column partition:
    /// places `a`'s columns at `cols_a` and `b`'s at `cols_b` in an
    /// `m × (|cols_a| + |cols_b|)` matrix.
    pub fn merge_cols(a: &Tensor, cols_a: &[usize], b: &Tensor, cols_b: &[usize]) -> Result<Tensor> {
        a.expect_matrix("merge_cols")?;
        b.expect_matrix("merge_cols")?;
        let m = a.shape[0];
        let width = cols_a.len() + cols_b.len();
        if b.shape[0] != m || a.shape[1] != cols_a.len() || b.shape[1] != cols_b.len() {
            return Err(Error::ShapeMismatch {
                op: "merge_cols",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        if cols_a.iter().chain(cols_b).any(|&c| c >= width) {
            return Err(Error::invalid("merge_cols: column index out of range"));
        }
        let mut out = vec![0.0; m * width];
        for r in 0..m {
            let orow = &mut out[r * width..(r + 1) * width];
            for (j, &c) in cols_a.iter().enumerate() {
                orow[c] = a.data[r * cols_a.len() + j];
            }
            for (j, &c) in cols_b.iter().enumerate() {
                orow[c] = b.data[r * cols_b.len() + j];
            }
        }
        Tensor::matrix(m, width, out)
    }
}

/// `out += a · b` for row-major `a: m×k`, `b: k×n`.
///
/// Four output rows are formed per pass over `b` so each loaded row of `b`
/// feeds four accumulators; every output entry still sums over `k` in
/// ascending order.
fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    let mut i = 0;
    while i + 4 <= m {
        let (o0, rest) = out[i * n..(i + 4) * n].split_at_mut(n);
        let (o1, rest) = rest.split_at_mut(n);
        let (o2, o3) = rest.split_at_mut(n);
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            for j in 0..n {
                let bv = brow[j];
                o0[j] += a0 * bv;
                o1[j] += a1 * bv;
                o2[j] += a2 * bv;
                o3[j] += a3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
        i += 1;
    }
}
