//! Random orthonormal sketching `y = A^T x`.
//!
//! `A` is the Gram-Schmidt orthonormalization of a standard normal `p x M`
//! matrix whose columns are drawn one after another, so the operator for
//! `M` is the leading-column prefix of the operator for any larger `M` under
//! the same seed. Because `A^T A = I_M`, sketched null samples keep covariance
//! `sigma0^2 I_M` and the detector runs unchanged in dimension `M`.

use std::path::Path;

use crate::model::{read_rows, write_rows, SignalCovariance, StreamSample};
use crate::numerics::{
    numerical_rank, orthonormalize, spectral_norm, Matrix, SymMatrix, DEFAULT_RANK_TOL,
};
use crate::rng::{fill_standard_normal, purpose_seed, rng_from_seed, Purpose};
use crate::{Error, Result};

const ORTHO_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SketchOperator {
    a: Matrix,
    seed: u64,
}

impl SketchOperator {
    /// Wraps a `p x M` matrix, checking that its columns are orthonormal.
    pub fn from_matrix(a: Matrix, seed: u64) -> Result<Self> {
        if a.cols() == 0 || a.cols() > a.rows() {
            return Err(Error::InvalidConfig(format!(
                "sketch dimension {} must lie in 1..={}",
                a.cols(),
                a.rows()
            )));
        }
        let err = a.gram().max_abs_diff(&SymMatrix::identity(a.cols()));
        if !(err <= ORTHO_TOL) {
            return Err(Error::InvalidInput(format!(
                "operator columns are not orthonormal (max |A^T A - I| = {err:e})"
            )));
        }
        Ok(Self { a, seed })
    }

    /// Ambient dimension `p`.
    pub fn p(&self) -> usize {
        self.a.rows()
    }

    /// Sketch dimension `M`.
    pub fn m(&self) -> usize {
        self.a.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    /// Operator made of the first `m` columns.
    pub fn prefix(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.m() {
            return Err(Error::InvalidConfig(format!(
                "prefix size {m} must lie in 1..={}",
                self.m()
            )));
        }
        Ok(Self {
            a: self.a.leading_columns(m),
            seed: self.seed,
        })
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                actual: x.len(),
            });
        }
        self.a.t_matvec_into(x, out);
        Ok(())
    }

    /// Rows `a_1, ..., a_M` (the columns of `A`).
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.a.columns()
    }

    pub fn from_rows(rows: &[Vec<f64>], seed: u64) -> Result<Self> {
        let a = Matrix::from_columns(rows)?;
        Self::from_matrix(a, seed)
    }

    /// Writes `M` rows of `p` values in the stream file format.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = format!("sketch operator p={} M={} seed={}", self.p(), self.m(), self.seed);
        write_rows(&self.to_rows(), path, Some(&header))
    }

    /// Reads an operator written by [`SketchOperator::write`]; the seed is
    /// not stored in the body and is reported as 0.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let rows = read_rows(path)?;
        Self::from_rows(&rows, 0)
    }
}

/// `p x M` operator with orthonormal columns, deterministic in `seed`.
pub fn make_sketch_operator(p: usize, m: usize, seed: u64) -> Result<SketchOperator> {
    if m == 0 || m > p {
        return Err(Error::InvalidConfig(format!("sketch dimension M={m} must lie in 1..={p}")));
    }
    let mut rng = rng_from_seed(purpose_seed(seed, Purpose::Operator));
    let cols: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let mut c = vec![0.0; p];
            fill_standard_normal(&mut rng, &mut c);
            c
        })
        .collect();
    let a = orthonormalize(&Matrix::from_columns(&cols)?)?;
    Ok(SketchOperator { a, seed })
}

/// Nested operators for each size in `ms`, all prefixes of one draw.
pub fn make_nested_operators(p: usize, ms: &[usize], seed: u64) -> Result<Vec<SketchOperator>> {
    let largest = ms.iter().copied().max().unwrap_or(0);
    let full = make_sketch_operator(p, largest, seed)?;
    ms.iter().map(|&m| full.prefix(m)).collect()
}

pub fn sketch_sample(op: &SketchOperator, x: &[f64]) -> Result<Vec<f64>> {
    let mut y = vec![0.0; op.m()];
    op.apply_into(x, &mut y)?;
    Ok(y)
}

/// Sketches a fully observed stream, keeping time stamps.
pub fn sketch_stream(op: &SketchOperator, samples: &[StreamSample]) -> Result<Vec<StreamSample>> {
    samples
        .iter()
        .map(|s| {
            if !s.is_fully_observed() {
                return Err(Error::Stream {
                    t: s.t,
                    message: "sketching requires fully observed samples".into(),
                });
            }
            let y = sketch_sample(op, &s.x).map_err(|e| Error::Stream {
                t: s.t,
                message: e.to_string(),
            })?;
            Ok(StreamSample::new(s.t, y))
        })
        .collect()
}

/// `(Sigma_hat_y, A^T Sigma_hat_x A)` for the sample covariances (second
/// moments) of the sketched and raw samples.
pub fn sketched_covariance_identity(
    op: &SketchOperator,
    samples: &[Vec<f64>],
) -> Result<(SymMatrix, SymMatrix)> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let scale = 1.0 / samples.len() as f64;
    let mut raw = SymMatrix::zeros(op.p());
    let mut sketched = SymMatrix::zeros(op.m());
    let mut y = vec![0.0; op.m()];
    for x in samples {
        op.apply_into(x, &mut y)?;
        raw.add_outer(x, scale);
        sketched.add_outer(&y, scale);
    }
    Ok((sketched, raw.congruence(&op.a)?))
}

/// `A^T Sigma A`.
pub fn sketched_signal(op: &SketchOperator, sigma: &SignalCovariance) -> Result<SymMatrix> {
    sigma.sigma.congruence(&op.a)
}

/// `(rank Sigma, rank A^T Sigma A)` at the default relative tolerance.
pub fn rank_preservation_check(op: &SketchOperator, sigma: &SignalCovariance) -> Result<(usize, usize)> {
    if sigma.dim() != op.p() {
        return Err(Error::DimensionMismatch {
            expected: op.p(),
            actual: sigma.dim(),
        });
    }
    let raw = if sigma.rank() == 0 {
        0
    } else {
        numerical_rank(&SymMatrix::diag(&sigma.scales), DEFAULT_RANK_TOL)?
    };
    let sketched = sketched_signal(op, sigma)?;
    let rank = if sketched.max_abs() == 0.0 {
        0
    } else {
        numerical_rank(&sketched, DEFAULT_RANK_TOL)?
    };
    Ok((raw, rank))
}

/// `||A^T U||`, the spectral norm of the `M x s` matrix.
pub fn subspace_alignment(op: &SketchOperator, basis: &Matrix) -> Result<f64> {
    if basis.rows() != op.p() {
        return Err(Error::DimensionMismatch {
            expected: op.p(),
            actual: basis.rows(),
        });
    }
    if basis.cols() == 0 {
        return Ok(0.0);
    }
    spectral_norm(&op.a.transpose().matmul(basis)?)
}
