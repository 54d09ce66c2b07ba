//! Small dense symmetric linear algebra.
//!
//! Full decompositions use cyclic Jacobi rotations. The largest eigenvalue
//! takes a closed form for `dim <= 2`, Jacobi up to [`JACOBI_MAX_DIM`] and
//! Lanczos with full reorthogonalization above it.

mod jacobi;
mod lanczos;
mod matrix;

pub use lanczos::{default_start, lanczos_top, TopEigen};
pub use matrix::{axpy, dot, norm, Matrix, SymMatrix};

use crate::{Error, Result};

/// Largest dimension handled by Jacobi in [`largest_eigenvalue`].
pub const JACOBI_MAX_DIM: usize = 64;

/// Default relative rank tolerance.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Eigenvalues sorted non-increasing, with eigenvectors as matching columns.
#[derive(Debug, Clone)]
pub struct EigResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Option<Matrix>,
}

impl EigResult {
    pub fn largest(&self) -> f64 {
        self.eigenvalues[0]
    }
}

fn check_finite(m: &SymMatrix) -> Result<()> {
    if m.dim() == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    if !m.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Full symmetric eigendecomposition.
pub fn sym_eig(m: &SymMatrix) -> Result<EigResult> {
    check_finite(m)?;
    let (values, vectors) = jacobi::jacobi(m, true);
    let vectors = vectors.expect("requested");
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let n = m.dim();
    let sorted_vectors = Matrix::from_fn(n, n, |i, j| vectors.get(i, order[j]));
    Ok(EigResult {
        eigenvalues: order.iter().map(|&i| values[i]).collect(),
        eigenvectors: Some(sorted_vectors),
    })
}

/// Eigenvalues only, sorted non-increasing.
pub fn sym_eigenvalues(m: &SymMatrix) -> Result<Vec<f64>> {
    check_finite(m)?;
    let (mut values, _) = jacobi::jacobi(m, false);
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Largest eigenvalue of a 2x2 symmetric matrix `[[a, b], [b, c]]`.
#[inline]
pub fn largest_eigenvalue_2x2(a: f64, b: f64, c: f64) -> f64 {
    let mean = 0.5 * (a + c);
    let half = 0.5 * (a - c);
    mean + half.hypot(b)
}

/// `lambda_1(m)`: the largest algebraic eigenvalue.
pub fn largest_eigenvalue(m: &SymMatrix) -> Result<f64> {
    check_finite(m)?;
    Ok(match m.dim() {
        1 => m.get(0, 0),
        2 => largest_eigenvalue_2x2(m.get(0, 0), m.get(0, 1), m.get(1, 1)),
        n if n <= JACOBI_MAX_DIM => sym_eigenvalues(m)?[0],
        n => lanczos_top(n, |x, y| m.matvec_into(x, y), None, 1e-10).value,
    })
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Columns must be
/// linearly independent and no more numerous than rows.
pub fn orthonormalize(cols: &Matrix) -> Result<Matrix> {
    let (p, k) = (cols.rows(), cols.cols());
    if k > p {
        return Err(Error::InvalidInput(format!(
            "cannot orthonormalize {k} columns in dimension {p}"
        )));
    }
    if !cols.is_finite() {
        return Err(Error::InvalidInput("non-finite entries".into()));
    }
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (j, mut v) in cols.columns().into_iter().enumerate() {
        let original = norm(&v);
        for _ in 0..2 {
            for qi in &q {
                let c = dot(qi, &v);
                axpy(-c, qi, &mut v);
            }
        }
        let n = norm(&v);
        if original == 0.0 || n <= 1e-10 * original {
            return Err(Error::Degenerate(format!(
                "column {j} is linearly dependent on the preceding columns"
            )));
        }
        v.iter_mut().for_each(|x| *x /= n);
        q.push(v);
    }
    Matrix::from_columns(&q)
}

/// Number of eigenvalues exceeding `rel_tol * max(lambda_1, tiny)`.
pub fn numerical_rank(m: &SymMatrix, rel_tol: f64) -> Result<usize> {
    let values = sym_eigenvalues(m)?;
    let cutoff = rel_tol * values[0].max(f64::MIN_POSITIVE);
    Ok(values.iter().filter(|&&v| v > cutoff).count())
}

/// Spectral norm of a rectangular matrix.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    let g = if a.rows() < a.cols() {
        a.transpose().gram()
    } else {
        a.gram()
    };
    if g.dim() == 0 {
        return Ok(0.0);
    }
    Ok(largest_eigenvalue(&g)?.max(0.0).sqrt())
}
