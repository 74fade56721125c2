//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Everything here works on symmetric matrices of modest size (a handful of
//! functionals or regressors), so eigendecompositions are cheap and used
//! freely for conditioning checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Condition number above which a symmetric solve is ridge-stabilised.
pub const RIDGE_CONDITION_LIMIT: f64 = 1e12;
/// Ridge added as a fraction of the mean diagonal entry.
pub const RIDGE_SCALE: f64 = 1e-10;
/// Floor applied to eigenvalues when forming inverse square roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Solution of a symmetric positive-definite system, with the warning raised
/// if the ridge fallback kicked in.
#[derive(Debug, Clone)]
pub struct SpdSolve {
    pub solution: DMatrix<f64>,
    pub warning: Option<String>,
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn sym_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(symmetrize(a)).eigenvalues
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    sym_eigenvalues(a).min()
}

/// Returns true when `a` is positive semidefinite up to `-tol`.
pub fn is_psd(a: &DMatrix<f64>, tol: f64) -> bool {
    min_eigenvalue(a) >= -tol
}

/// Solves `a x = b` for symmetric positive-definite `a` by Cholesky.
///
/// When the condition number exceeds [`RIDGE_CONDITION_LIMIT`] a ridge of
/// `RIDGE_SCALE * trace / dim` is added to the diagonal and a warning is
/// returned alongside the solution. The error string describes why the
/// system could not be solved at all.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<SpdSolve, String> {
    let dim = a.nrows();
    if dim != a.ncols() || dim != b.nrows() {
        return Err(format!(
            "shape mismatch: {}x{} system with {}x{} right-hand side",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        ));
    }
    if dim == 0 {
        return Ok(SpdSolve {
            solution: DMatrix::zeros(0, b.ncols()),
            warning: None,
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err("matrix has non-finite entries".into());
    }
    let mut sym = symmetrize(a);
    let eig = sym_eigenvalues(&sym);
    let (lo, hi) = (eig.min(), eig.max());
    if hi <= 0.0 {
        return Err(format!("largest eigenvalue {hi:e} is not positive"));
    }
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let mut warning = None;
    if condition > RIDGE_CONDITION_LIMIT {
        let ridge = RIDGE_SCALE * sym.trace() / dim as f64;
        for i in 0..dim {
            sym[(i, i)] += ridge;
        }
        warning = Some(format!(
            "ill-conditioned system (condition {condition:.3e}); added ridge {ridge:.3e}"
        ));
    }
    let chol = sym
        .cholesky()
        .ok_or_else(|| format!("not positive definite (smallest eigenvalue {lo:e})"))?;
    Ok(SpdSolve {
        solution: chol.solve(b),
        warning,
    })
}

/// Inverse of a symmetric positive-definite matrix, via [`solve_spd`].
pub fn inverse_spd(a: &DMatrix<f64>) -> Result<SpdSolve, String> {
    solve_spd(a, &DMatrix::identity(a.nrows(), a.nrows()))
}

/// Symmetric inverse square root `a^{-1/2}` by eigendecomposition.
///
/// Eigenvalues are floored at [`EIGEN_FLOOR`]. Fails with the smallest
/// eigenvalue when `a` is not positive definite.
pub fn inv_sqrt_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let lo = if eig.eigenvalues.is_empty() {
        f64::INFINITY
    } else {
        eig.eigenvalues.min()
    };
    if !(lo > 0.0) {
        return Err(lo);
    }
    let scaled = eig
        .eigenvalues
        .map(|v| 1.0 / v.max(EIGEN_FLOOR).sqrt());
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * DMatrix::from_diagonal(&scaled) * q.transpose())))
}

/// Ratio of smallest to largest singular value; zero for an empty matrix.
pub fn singular_value_ratio(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let sv = a.clone().singular_values();
    let hi = sv.max();
    if hi <= 0.0 {
        0.0
    } else {
        sv.min() / hi
    }
}

/// Empirical cross moment `a' b / n` of two n-row matrices.
pub fn cross_moment(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows().max(1) as f64;
    a.transpose() * b / n
}

pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let dim: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(dim, dim);
    let mut offset = 0;
    for block in blocks {
        let k = block.nrows();
        out.view_mut((offset, offset), (k, k)).copy_from(block);
        offset += k;
    }
    out
}

pub fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

pub fn select_columns(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}

pub fn select_square(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub fn matrix_to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| a.row(i).iter().copied().collect())
        .collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(format!(
            "row {bad} has length {}, expected {ncols}",
            rows[bad].len()
        ));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
