//! Row-major f64 matrices and the handful of kernels the toy model needs.
//!
//! Every reduction runs in a fixed index order and never uses fused
//! multiply-add, so results are bit-identical across platforms.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `out += a · b` with `a: r×k`, `b: k×c`.
///
/// Each output element accumulates its `k` products in index order, so the
/// result does not depend on the vector width the loop compiles to.
pub fn matmul_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    assert_eq!((out.rows, out.cols), (a.rows, b.cols), "matmul output shape");
    const BLOCK: usize = 8;
    let (k, c) = (a.cols, b.cols);
    let full = c - c % BLOCK;
    for i in 0..a.rows {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out.data[i * c..(i + 1) * c];
        // output tiles stay in registers across the whole inner dimension
        for j0 in (0..full).step_by(BLOCK) {
            let mut acc = [0.0; BLOCK];
            acc.copy_from_slice(&orow[j0..j0 + BLOCK]);
            for (p, &av) in arow.iter().enumerate() {
                let bt = &b.data[p * c + j0..p * c + j0 + BLOCK];
                for t in 0..BLOCK {
                    acc[t] += av * bt[t];
                }
            }
            orow[j0..j0 + BLOCK].copy_from_slice(&acc);
        }
        if full < c {
            for (p, &av) in arow.iter().enumerate() {
                axpy(av, &b.data[p * c + full..(p + 1) * c], &mut orow[full..]);
            }
        }
    }
}

/// `y += alpha · x`.
#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    let n = y.len();
    let x = &x[..n];
    for j in 0..n {
        y[j] += alpha * x[j];
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows, b.cols);
    matmul_acc(a, b, &mut out);
    out
}

/// `out += aᵀ · b` with `a: n×r`, `b: n×c`, `out: r×c`.
pub fn matmul_tn_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    assert_eq!(a.rows, b.rows, "matmul_tn row mismatch");
    assert_eq!((out.rows, out.cols), (a.cols, b.cols), "matmul_tn output shape");
    let (r, c) = (a.cols, b.cols);
    for n in 0..a.rows {
        let arow = &a.data[n * r..(n + 1) * r];
        let brow = &b.data[n * c..(n + 1) * c];
        for (i, &av) in arow.iter().enumerate() {
            axpy(av, brow, &mut out.data[i * c..(i + 1) * c]);
        }
    }
}

/// `out += a · bᵀ` with `a: r×k`, `b: c×k`.
pub fn matmul_nt_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) {
    matmul_acc(a, &b.transpose(), out);
}

/// Sequential dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &x in row {
        sum += (x - max).exp();
    }
    let lse = max + sum.ln();
    row.iter().map(|&x| x - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(f64::exp).collect()
}
