//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Induced infinity norm (max absolute row sum).
pub fn norm_inf(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn max_abs_slice(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, ordered like `values`.
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }
}

/// Symmetrizes `h` as `(H + Hᵀ)/2` and decomposes it.
pub fn sym_eig(h: &DMatrix<f64>) -> Result<SymEig> {
    if h.nrows() != h.ncols() {
        return Err(Error::Shape(format!("{}x{} matrix is not square", h.nrows(), h.ncols())));
    }
    if h.nrows() == 0 {
        return Ok(SymEig { values: vec![], vectors: DMatrix::zeros(0, 0) });
    }
    let sym = (h + h.transpose()) * 0.5;
    let n = sym.nrows();
    let eig = sym.try_symmetric_eigen(f64::EPSILON, 10_000).ok_or(Error::Convergence)?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, order.len(), |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(SymEig { values, vectors })
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return vec![];
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank with cutoff `rel_tol * σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let Some(&top) = s.first() else { return 0 };
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_tol * top).count()
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Greedy column pivoting (modified Gram-Schmidt with largest-residual
/// pivot): returns the indices of `k` columns of `m`, in pick order, that
/// span the column space as well-conditioned as the greedy rule allows.
pub fn pivoted_columns(m: &DMatrix<f64>, k: usize) -> Result<Vec<usize>> {
    if k > m.ncols() || k > m.nrows() {
        return Err(Error::Rank(format!(
            "cannot select {k} independent columns from a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut residual = m.clone();
    let mut picked = Vec::with_capacity(k);
    let scale = m.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    for _ in 0..k {
        let (best, norm) = (0..residual.ncols())
            .filter(|j| !picked.contains(j))
            .map(|j| (j, residual.column(j).norm()))
            .fold((usize::MAX, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best == usize::MAX || norm <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Rank(format!("only {} independent columns found", picked.len())));
        }
        picked.push(best);
        let q: DVector<f64> = residual.column(best) / norm;
        for j in 0..residual.ncols() {
            let proj = q.dot(&residual.column(j));
            let mut col = residual.column_mut(j);
            col.axpy(-proj, &q, 1.0);
        }
    }
    Ok(picked)
}
