//! Dense symmetric matrices and Cholesky factorisation.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;
use crate::{Error, Result};

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn<F: FnMut(usize, usize) -> f64>(n: usize, mut f: F) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        Self::from_fn(n, |i, j| rows[i][j])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Principal submatrix on the given indices.
    pub fn select(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(idx.len(), |a, b| self[(idx[a], idx[b])])
    }

    pub fn quadratic_form(&self, a: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let mut row = 0.0;
            for j in 0..self.n {
                row += self[(i, j)] * a[j];
            }
            acc += a[i] * row;
        }
        acc
    }

    pub fn mul_vec(&self, a: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().zip(a).map(|(x, y)| x * y).sum()).collect()
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    pub lower: Matrix,
    /// Smallest pivot met before any clamping or jitter.
    pub min_pivot: f64,
    /// Jitter added to the diagonal (0 if none was needed).
    pub jitter: f64,
}

impl Cholesky {
    /// Factorises a positive semi-definite matrix. Pivots in
    /// `[−tol·scale, tol·scale]` are treated as zero and their column is
    /// dropped, so rank-deficient covariances (e.g. a variable pinned at 0)
    /// are accepted.
    pub fn semidefinite(sigma: &Matrix, tol: f64) -> Result<Self> {
        let n = sigma.dim();
        let scale = (0..n).map(|i| sigma[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut l = Matrix::zeros(n);
        let mut min_pivot = f64::INFINITY;
        for j in 0..n {
            let mut d = sigma[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            min_pivot = min_pivot.min(d);
            if d < -tol * scale {
                return Err(Error::NotPositiveDefinite { row: j, pivot: d });
            }
            if d <= tol * scale {
                continue;
            }
            let ljj = sqrt(d);
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = sigma[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Cholesky { lower: l, min_pivot, jitter: 0.0 })
    }

    /// Strict factorisation with diagonal jitter repair: starts at
    /// `1e−12·trace/dim` and escalates ×10 up to `1e−8·trace/dim`.
    pub fn with_jitter(sigma: &Matrix) -> Result<Self> {
        let n = sigma.dim();
        let base = sigma.trace() / n.max(1) as f64;
        let (first_min, mut last_err) = match strict(sigma, 0.0) {
            Ok((l, min_pivot)) => return Ok(Cholesky { lower: l, min_pivot, jitter: 0.0 }),
            Err((min_pivot, e)) => (min_pivot, e),
        };
        let mut rel = 1e-12;
        while rel <= 1e-8 * (1.0 + 1e-9) {
            match strict(sigma, rel * base) {
                Ok((l, _)) => {
                    return Ok(Cholesky { lower: l, min_pivot: first_min, jitter: rel * base });
                }
                Err((_, e)) => last_err = e,
            }
            rel *= 10.0;
        }
        Err(last_err)
    }

    /// `L z`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        let n = self.lower.dim();
        for i in 0..n {
            let row = self.lower.row(i);
            let mut acc = 0.0;
            for k in 0..=i {
                acc += row[k] * z[k];
            }
            out[i] = acc;
        }
    }
}

fn strict(sigma: &Matrix, jitter: f64) -> core::result::Result<(Matrix, f64), (f64, Error)> {
    let n = sigma.dim();
    let mut l = Matrix::zeros(n);
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let mut d = sigma[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        min_pivot = min_pivot.min(d);
        if d <= 0.0 || !d.is_finite() {
            return Err((min_pivot, Error::NotPositiveDefinite { row: j, pivot: d }));
        }
        let ljj = sqrt(d);
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = sigma[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok((l, min_pivot))
}
