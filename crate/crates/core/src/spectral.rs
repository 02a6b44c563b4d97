//! Dense spectral reference computations.
//!
//! Filtering in the eigenbasis, `y = U g(Λ) Uᵀ x`, is the definition every
//! polynomial filter approximates. It costs a full eigendecomposition, so it
//! is only used for verification and for spectrum summaries of small graphs.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{shape_check, Result};
use crate::graph::CsrMatrix;
use crate::tensor::Tensor;

/// Largest graph `inspect` decomposes densely.
pub const DENSE_SPECTRUM_LIMIT: usize = 2000;

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: Tensor,
}

pub fn symmetric_eigen(m: &Tensor) -> Result<Eigen> {
    let n = m.rows();
    shape_check("symmetric_eigen", m.cols() == n, m.shape(), (n, n))?;
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, m.data()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Tensor::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, col, eig.eigenvectors[(r, i)]);
        }
    }
    Ok(Eigen { values, vectors })
}

impl Eigen {
    /// `U g(Λ) Uᵀ x`.
    pub fn filter(&self, x: &Tensor, g: impl Fn(f64) -> f64) -> Result<Tensor> {
        let ut_x = self.vectors.transpose().matmul(x)?;
        let mut scaled = ut_x;
        for (r, &lambda) in self.values.iter().enumerate() {
            let gv = g(lambda);
            for c in 0..scaled.cols() {
                scaled.set(r, c, scaled.get(r, c) * gv);
            }
        }
        self.vectors.matmul(&scaled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumMethod {
    Dense,
    PowerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumSummary {
    /// Smallest eigenvalue; only known with the dense method.
    pub min: Option<f64>,
    /// Largest eigenvalue (dense) or largest |eigenvalue| estimate.
    pub max: f64,
    pub method: SpectrumMethod,
}

/// Spectrum extremes; dense for `n ≤ DENSE_SPECTRUM_LIMIT`, otherwise a
/// power-iteration estimate of the spectral radius.
pub fn spectrum_summary(op: &CsrMatrix) -> Result<SpectrumSummary> {
    if op.rows() <= DENSE_SPECTRUM_LIMIT {
        let eig = symmetric_eigen(&op.to_dense())?;
        return Ok(SpectrumSummary {
            min: eig.values.first().copied(),
            max: eig.values.last().copied().unwrap_or(0.0),
            method: SpectrumMethod::Dense,
        });
    }
    Ok(SpectrumSummary {
        min: None,
        max: power_iteration(op, 500)?,
        method: SpectrumMethod::PowerIteration,
    })
}

/// Spectral radius estimate of a symmetric operator.
pub fn power_iteration(op: &CsrMatrix, iters: usize) -> Result<f64> {
    let n = op.rows();
    // Deterministic, non-degenerate start vector.
    let mut v = Tensor::from_vec(n, 1, (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect())?;
    let mut estimate = 0.0;
    for _ in 0..iters {
        let w = op.spmm(&v)?;
        let norm = w.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let vnorm = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        estimate = norm / vnorm;
        v = Tensor::from_vec(n, 1, w.data().iter().map(|x| x / norm).collect())?;
    }
    Ok(estimate)
}
