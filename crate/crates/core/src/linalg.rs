//! Dense row-major matrices and the few kernels the classifier pipeline needs:
//! `A * A^T`, matrix-vector products and a blocked Cholesky solve.
//!
//! Parallel routines split work into fixed-size row panels. The panel size
//! never depends on the worker count, so every output element is computed by
//! the same sequence of floating-point operations regardless of scheduling.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows per parallel work item.
const PANEL: usize = 64;
/// Cholesky block size.
const BLOCK: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Copies the upper triangle onto the lower one.
    pub fn mirror_upper(&mut self) {
        debug_assert!(self.is_square());
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                self.data[j * n + i] = self.data[i * n + j];
            }
        }
    }

    /// Row/column selection, order preserving. Duplicate indices are kept.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Result<Matrix> {
        for &i in rows {
            if i >= self.rows {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    dim: self.rows,
                });
            }
        }
        for &j in cols {
            if j >= self.cols {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    dim: self.cols,
                });
            }
        }
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            let row = self.row(i);
            data.extend(cols.iter().map(|&j| row[j]));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols: cols.len(),
            data,
        })
    }

    /// `self * self^T`.
    ///
    /// Only the upper triangle is computed; it is mirrored so the result is
    /// exactly symmetric.
    pub fn mul_transpose(&self) -> Matrix {
        let (n, k) = (self.rows, self.cols);
        let mut out = Matrix::zeros(n, n);
        if n == 0 {
            return out;
        }
        let a = SendPtr(self.data.as_ptr() as *mut f64);
        out.data
            .par_chunks_mut(PANEL * n)
            .enumerate()
            .for_each(|(panel, chunk)| {
                let i0 = panel * PANEL;
                let rows = chunk.len() / n;
                // Columns i0.. cover the upper triangle of this panel.
                let cols = n - i0;
                // SAFETY: `a` points at `self.data` (n*k values, read only);
                // the strides address rows i0..i0+rows and i0..n of it, and
                // `chunk` is this task's exclusive slice of the output.
                unsafe {
                    matrixmultiply::dgemm(
                        rows,
                        k,
                        cols,
                        1.0,
                        a.get().add(i0 * k),
                        k as isize,
                        1,
                        a.get().add(i0 * k),
                        1,
                        k as isize,
                        0.0,
                        chunk.as_mut_ptr().add(i0),
                        n as isize,
                        1,
                    );
                }
            });
        out.mirror_upper();
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: x.len(),
            });
        }
        if self.cols == 0 {
            return Ok(vec![0.0; self.rows]);
        }
        Ok(self
            .data
            .par_chunks(self.cols)
            .map(|row| dot(row, x))
            .collect())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy)]
struct SendPtr(*mut f64);

impl SendPtr {
    // Method access keeps closures capturing the whole wrapper, not the raw field.
    fn get(self) -> *mut f64 {
        self.0
    }
}
// SAFETY: used only to hand disjoint output regions and read-only inputs to
// rayon tasks.
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

/// Lower Cholesky factor `L` of a symmetric positive definite matrix, `A = L L^T`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    // Row-major; only the lower triangle is meaningful.
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors `a + shift * I`, reading only the lower triangle of `a`.
    pub fn factor_shifted(a: &Matrix, shift: f64) -> Result<Cholesky> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                expected: a.rows,
                actual: a.cols,
            });
        }
        let n = a.rows;
        let mut l = a.data.clone();
        for i in 0..n {
            l[i * n + i] += shift;
        }
        let mut k = 0;
        while k < n {
            let kb = BLOCK.min(n - k);
            factor_diagonal_block(&mut l, n, k, kb)?;
            let rest = k + kb;
            if rest < n {
                solve_panel(&mut l, n, k, kb);
                update_trailing(&mut l, n, k, kb);
            }
            k = rest;
        }
        Ok(Cholesky { n, l })
    }

    pub fn factor(a: &Matrix) -> Result<Cholesky> {
        Self::factor_shifted(a, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: b.len(),
            });
        }
        let l = &self.l;
        let mut y = b.to_vec();
        // L y = b
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            let s = y[i] - dot(row, &y[..i]);
            y[i] = s / l[i * n + i];
        }
        // L^T x = y, column oriented so rows of L are read contiguously.
        for i in (0..n).rev() {
            let xi = y[i] / l[i * n + i];
            y[i] = xi;
            let row = &l[i * n..i * n + i];
            for (yj, &lij) in y[..i].iter_mut().zip(row) {
                *yj -= lij * xi;
            }
        }
        Ok(y)
    }
}

fn factor_diagonal_block(l: &mut [f64], n: usize, k: usize, kb: usize) -> Result<()> {
    for j in k..k + kb {
        let mut d = l[j * n + j];
        for p in k..j {
            d -= l[j * n + p] * l[j * n + p];
        }
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..k + kb {
            let mut s = l[i * n + j];
            for p in k..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            l[i * n + j] = s / d;
        }
    }
    Ok(())
}

/// `L21 <- A21 * L11^{-T}` for the rows below the diagonal block.
fn solve_panel(l: &mut [f64], n: usize, k: usize, kb: usize) {
    let (head, tail) = l.split_at_mut((k + kb) * n);
    let diag = &head[k * n..];
    tail.par_chunks_mut(n).for_each(|row| {
        for j in 0..kb {
            let lj = &diag[j * n + k..j * n + k + j];
            let s = row[k + j] - dot(&row[k..k + j], lj);
            row[k + j] = s / diag[j * n + k + j];
        }
    });
}

/// `A22 <- A22 - L21 L21^T`, lower triangle only.
fn update_trailing(l: &mut [f64], n: usize, k: usize, kb: usize) {
    let start = k + kb;
    let base = SendPtr(l.as_mut_ptr());
    let panels: Vec<usize> = (start..n).step_by(PANEL).collect();
    panels.par_iter().for_each(|&i0| {
        let rows = PANEL.min(n - i0);
        // Columns start..i0+rows cover the lower triangle of these rows.
        let cols = i0 + rows - start;
        // SAFETY: reads columns k..k+kb of rows start..n, which no task
        // writes in this step; writes columns start..i0+rows of rows
        // i0..i0+rows, which are disjoint between tasks.
        unsafe {
            let p = base.get();
            matrixmultiply::dgemm(
                rows,
                kb,
                cols,
                -1.0,
                p.add(i0 * n + k),
                n as isize,
                1,
                p.add(start * n + k),
                1,
                n as isize,
                1.0,
                p.add(i0 * n + start),
                n as isize,
                1,
            );
        }
    });
}
