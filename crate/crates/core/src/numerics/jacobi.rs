use super::matrix::{Matrix, SymMatrix};

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition. Returns unsorted eigenvalues and, when
/// requested, the accumulated rotations (columns are eigenvectors).
pub(crate) fn jacobi(m: &SymMatrix, want_vectors: bool) -> (Vec<f64>, Option<Matrix>) {
    let n = m.dim();
    let mut a: Vec<f64> = m.as_slice().to_vec();
    let mut v = if want_vectors {
        Some(Matrix::identity(n).as_slice().to_vec())
    } else {
        None
    };

    let frob2: f64 = a.iter().map(|x| x * x).sum();
    let stop = (f64::EPSILON * f64::EPSILON) * frob2 * 1e-2;

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off <= stop || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // rotation is numerically a no-op once apq is below the
                // rounding noise of both diagonal entries
                if apq.abs() < 1e-18 * (app.abs() + aqq.abs()) {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }

    let values = (0..n).map(|i| a[i * n + i]).collect();
    let vectors = v.map(|v| Matrix::from_row_major(n, n, v).expect("square"));
    (values, vectors)
}
