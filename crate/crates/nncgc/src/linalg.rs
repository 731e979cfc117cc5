//! Dense row-major matrix kernels used by the network engine and the
//! discovery code. Dimensions stay small (hundreds), so the plain
//! slice-based loops below are fast enough and keep the crate free of
//! BLAS linkage.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {context} (left {left_rows}x{left_cols}, right {right_rows}x{right_cols})")]
    DimensionMismatch {
        context: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    BadShape { rows: usize, cols: usize, len: usize },
    #[error("eigendecomposition did not converge after {0} sweeps")]
    EighNoConvergence(usize),
}

/// Row-major dense matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::BadShape { rows, cols, len: data.len() });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(LinalgError::BadShape { rows: r, cols: c, len: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Rows of `self` selected by `idx`, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (o, &r) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(r));
        }
        out
    }

    /// Columns of `self` selected by `idx`, in the given order.
    pub fn select_cols(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, idx.len());
        for r in 0..self.rows {
            let src = self.row(r);
            let dst = out.row_mut(r);
            for (o, &c) in idx.iter().enumerate() {
                dst[o] = src[c];
            }
        }
        out
    }

    pub fn transposed(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * other`. The accumulation walks four rows of `other` at a
    /// time so each output row is read and written once per block, and the
    /// inner loop stays contiguous for vectorization.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                context: "matmul",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        let k = self.cols;
        let n = other.cols;
        let mut out = Matrix::zeros(self.rows, n);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = &mut out.data[i * n..(i + 1) * n];
            accumulate_row(arow, &other.data, k, n, orow);
        }
        Ok(out)
    }

    /// `self^T * other` without materializing the transpose.
    pub fn matmul_transa(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch {
                context: "matmul_transa",
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        let k = self.cols;
        let n = other.cols;
        let mut out = Matrix::zeros(k, n);
        let mut s = 0;
        while s + 4 <= self.rows {
            let b0 = &other.data[s * n..(s + 1) * n];
            let b1 = &other.data[(s + 1) * n..(s + 2) * n];
            let b2 = &other.data[(s + 2) * n..(s + 3) * n];
            let b3 = &other.data[(s + 3) * n..(s + 4) * n];
            for col in 0..k {
                let a0 = self.data[s * k + col];
                let a1 = self.data[(s + 1) * k + col];
                let a2 = self.data[(s + 2) * k + col];
                let a3 = self.data[(s + 3) * k + col];
                let orow = &mut out.data[col * n..(col + 1) * n];
                for j in 0..n {
                    orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
                }
            }
            s += 4;
        }
        while s < self.rows {
            let arow = self.row(s);
            let brow = &other.data[s * n..(s + 1) * n];
            for (col, &a) in arow.iter().enumerate() {
                let orow = &mut out.data[col * n..(col + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
            s += 1;
        }
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_transb(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.matmul(&other.transposed())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-column mean and population standard deviation.
    pub fn column_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.rows.max(1) as f64;
        let mut mean = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (m, v) in mean.iter_mut().zip(self.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r).iter().enumerate() {
                let d = v - mean[c];
                var[c] += d * d;
            }
        }
        let sd = var.into_iter().map(|v| (v / n).sqrt()).collect();
        (mean, sd)
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order with the matching orthonormal
/// eigenvectors as columns. Intended for the small covariance matrices of
/// the whitening step (k below ~30).
pub fn eigh_symmetric(a: &Matrix) -> Result<(Vec<f64>, Matrix), LinalgError> {
    assert_eq!(a.rows, a.cols, "eigh_symmetric needs a square matrix");
    let n = a.rows;
    let mut m = a.clone();
    let mut vecs = Matrix::identity(n);
    let max_sweeps = 100;

    for sweep in 0..max_sweeps {
        let mut off = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                off += m.get(r, c) * m.get(r, c);
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(&m)) {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| m.get(j, j).partial_cmp(&m.get(i, i)).unwrap());
            let vals = order.iter().map(|&i| m.get(i, i)).collect();
            let sorted_vecs = reorder_columns(&vecs, &order);
            return Ok((vals, sorted_vecs));
        }
        let _ = sweep;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = vecs.get(k, p);
                    let vkq = vecs.get(k, q);
                    vecs.set(k, p, c * vkp - s * vkq);
                    vecs.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Err(LinalgError::EighNoConvergence(max_sweeps))
}

fn frobenius(m: &Matrix) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn reorder_columns(m: &Matrix, order: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows, order.len());
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..m.rows {
            out.set(r, dst, m.get(r, src));
        }
    }
    out
}

/// orow += arow * B, walking four B rows per pass.
fn accumulate_row(arow: &[f64], b: &[f64], k: usize, n: usize, orow: &mut [f64]) {
    let mut kk = 0;
    while kk + 4 <= k {
        let a0 = arow[kk];
        let a1 = arow[kk + 1];
        let a2 = arow[kk + 2];
        let a3 = arow[kk + 3];
        let b0 = &b[kk * n..(kk + 1) * n];
        let b1 = &b[(kk + 1) * n..(kk + 2) * n];
        let b2 = &b[(kk + 2) * n..(kk + 3) * n];
        let b3 = &b[(kk + 3) * n..(kk + 4) * n];
        for j in 0..n {
            orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        kk += 4;
    }
    while kk < k {
        let a = arow[kk];
        let brow = &b[kk * n..(kk + 1) * n];
        for (o, &bv) in orow.iter_mut().zip(brow) {
            *o += a * bv;
        }
        kk += 1;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
