//! Positive-definite Gram matrices with an incrementally maintained inverse
//! and log-determinant.
//!
//! A [`PsdLedger`] starts as `lambda * I` and absorbs weighted rank-one
//! updates `w * x x^T`. The inverse is kept current with the Sherman-Morrison
//! identity and the log-determinant with the matrix determinant lemma, so a
//! step costs `O(d^2)`. Every [`REFACTOR_INTERVAL`] updates the inverse and
//! log-determinant are recomputed from the stored matrix by a Cholesky
//! factorization to stop floating-point drift from accumulating.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Number of rank-one updates between two Cholesky re-factorizations.
pub const REFACTOR_INTERVAL: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct PsdLedger {
    dim: usize,
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    log_det: f64,
    pending: usize,
}

impl PsdLedger {
    /// `lambda * I` in dimension `dim`.
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("ledger dimension must be at least 1".into()));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "regularization lambda must be positive and finite, got {lambda}"
            )));
        }
        Ok(Self {
            dim,
            matrix: DMatrix::identity(dim, dim) * lambda,
            inverse: DMatrix::identity(dim, dim) / lambda,
            log_det: dim as f64 * lambda.ln(),
            pending: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Natural log of `det(matrix)`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: len,
            });
        }
        Ok(())
    }

    /// Quadratic form `x^T M x` for a symmetric matrix stored column-major.
    fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
        let d = x.len();
        let data = m.as_slice();
        let mut acc = 0.0;
        for j in 0..d {
            let col = &data[j * d..(j + 1) * d];
            let mut s = 0.0;
            for i in 0..d {
                s += col[i] * x[i];
            }
            acc += s * x[j];
        }
        acc
    }

    /// `matrix += weight * x x^T`, keeping the inverse and log-determinant in sync.
    pub fn rank_one_update(&mut self, x: &[f64], weight: f64) -> Result<()> {
        self.check_dim(x.len())?;
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::Config(format!(
                "rank-one update weight must be positive and finite, got {weight}"
            )));
        }
        if x.iter().all(|&v| v == 0.0) {
            return Ok(());
        }
        let d = self.dim;
        let inv_x: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| self.inverse[(i, j)] * x[j]).sum())
            .collect();
        let q: f64 = inv_x.iter().zip(x).map(|(a, b)| a * b).sum();
        let denom = 1.0 + weight * q;
        for j in 0..d {
            for i in 0..d {
                self.matrix[(i, j)] += weight * x[i] * x[j];
                self.inverse[(i, j)] -= weight * inv_x[i] * inv_x[j] / denom;
            }
        }
        self.log_det += denom.ln();
        self.pending += 1;
        if self.pending >= REFACTOR_INTERVAL {
            self.refactor();
        }
        Ok(())
    }

    /// Recompute the inverse and log-determinant from the stored matrix.
    pub fn refactor(&mut self) {
        self.pending = 0;
        // The matrix is lambda*I plus PSD terms, so Cholesky only fails if
        // rounding has destroyed positive-definiteness; keep the incremental
        // values in that case.
        if let Some(chol) = self.matrix.clone().cholesky() {
            let l = chol.l_dirty();
            self.log_det = 2.0 * (0..self.dim).map(|i| l[(i, i)].ln()).sum::<f64>();
            let mut inv = chol.inverse();
            // symmetrize
            for j in 0..self.dim {
                for i in 0..j {
                    let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                    inv[(i, j)] = v;
                    inv[(j, i)] = v;
                }
            }
            self.inverse = inv;
        } else {
            log::warn!("cholesky re-factorization failed; keeping incremental inverse");
        }
    }

    /// `sqrt(x^T M^{-1} x)`, the dual norm used by every exploration bonus.
    pub fn mahalanobis_inv(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.mahalanobis_inv_unchecked(x))
    }

    pub(crate) fn mahalanobis_inv_unchecked(&self, x: &[f64]) -> f64 {
        Self::quad_form(&self.inverse, x).max(0.0).sqrt()
    }

    /// `sqrt(v^T M v)`, i.e. `||M^{1/2} v||`.
    pub fn matrix_norm(&self, v: &[f64]) -> Result<f64> {
        self.check_dim(v.len())?;
        Ok(Self::quad_form(&self.matrix, v).max(0.0).sqrt())
    }

    /// `M^{-1} b` through the maintained inverse.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(b.len())?;
        let d = self.dim;
        Ok((0..d)
            .map(|i| (0..d).map(|j| self.inverse[(i, j)] * b[j]).sum())
            .collect())
    }
}
