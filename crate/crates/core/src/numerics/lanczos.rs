use super::matrix::{axpy, dot, norm};

/// Largest eigenpair estimate produced by [`lanczos_top`].
#[derive(Debug, Clone)]
pub struct TopEigen {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
}

/// Deterministic generic start vector: the normalized all-ones vector plus a
/// fixed aperiodic perturbation, so that no coordinate direction is missed.
pub fn default_start(dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim)
        .map(|i| 1.0 + 0.3 * ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
        .collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Lanczos iteration with full reorthogonalization for the largest algebraic
/// eigenvalue of a symmetric operator given by `matvec`.
///
/// Stops when the Ritz residual `beta_j |s_j|` falls below `tol * |theta|`,
/// on an invariant subspace, or after `dim` steps (where the tridiagonal is
/// similar to the operator). The start vector must not be orthogonal to the
/// top eigenvector; warm starts are blended with [`default_start`] for that
/// reason.
pub fn lanczos_top<F>(dim: usize, mut matvec: F, start: Option<&[f64]>, tol: f64) -> TopEigen
where
    F: FnMut(&[f64], &mut [f64]),
{
    assert!(dim > 0);
    let mut v0 = default_start(dim);
    if let Some(s) = start {
        let ns = norm(s);
        if ns > 0.0 && ns.is_finite() {
            for (a, b) in v0.iter_mut().zip(s) {
                *a = b / ns + 1e-3 * *a;
            }
            let n = norm(&v0);
            v0.iter_mut().for_each(|x| *x /= n);
        }
    }

    let max_steps = dim;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_steps.min(64));
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; dim];
    let mut theta_lo = f64::NEG_INFINITY;
    let mut scale = 0.0_f64;
    let mut theta;
    let mut y: Vec<f64>;

    basis.push(v0);
    loop {
        let j = basis.len() - 1;
        matvec(&basis[j], &mut w);
        let alpha = dot(&basis[j], &w);
        axpy(-alpha, &basis[j], &mut w);
        if j > 0 {
            axpy(-betas[j - 1], &basis[j - 1], &mut w);
        }
        // a second pass only when the first removed most of the vector
        let mut before = norm(&w);
        let mut beta = before;
        for _ in 0..3 {
            for b in &basis {
                let c = dot(b, &w);
                axpy(-c, b, &mut w);
            }
            beta = norm(&w);
            if beta > 0.7 * before || beta == 0.0 {
                break;
            }
            before = beta;
        }
        alphas.push(alpha);
        scale = scale.max(alpha.abs()).max(beta);

        theta = match betas.last() {
            // Weyl: the new top Ritz value is at most max(theta_prev, alpha) + beta_prev
            Some(&b) if theta_lo.is_finite() => {
                tridiag_top_in(&alphas, &betas, theta_lo, theta_lo.max(alpha) + b.abs())
            }
            _ => tridiag_top_eigenvalue(&alphas, &betas, theta_lo),
        };
        theta_lo = theta;
        y = tridiag_eigenvector(&alphas, &betas, theta);
        let last = y.last().copied().unwrap_or(1.0).abs();
        let residual = beta * last;

        let done = basis.len() == max_steps
            || beta <= 1e-13 * scale.max(f64::MIN_POSITIVE)
            || residual <= tol * theta.abs().max(1e-300);
        if done {
            break;
        }
        betas.push(beta);
        let next: Vec<f64> = w.iter().map(|x| x / beta).collect();
        basis.push(next);
    }

    let mut vector = vec![0.0; dim];
    for (b, &c) in basis.iter().zip(&y) {
        axpy(c, b, &mut vector);
    }
    TopEigen {
        value: theta,
        vector,
        iterations: alphas.len(),
    }
}

/// Number of eigenvalues of the tridiagonal (alphas, betas) strictly below `x`.
fn sturm_count(alphas: &[f64], betas: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..alphas.len() {
        let b2 = if i == 0 { 0.0 } else { betas[i - 1] * betas[i - 1] };
        q = alphas[i] - x - if i == 0 { 0.0 } else { b2 / q };
        if q == 0.0 {
            q = -f64::EPSILON * (alphas[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Largest eigenvalue of a symmetric tridiagonal matrix by Sturm bisection.
/// `lower_hint` is a known lower bound (the previous Ritz value).
pub(crate) fn tridiag_top_eigenvalue(alphas: &[f64], betas: &[f64], lower_hint: f64) -> f64 {
    let n = alphas.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = (if i > 0 { betas[i - 1].abs() } else { 0.0 })
            + (if i + 1 < n { betas[i].abs() } else { 0.0 });
        lo = lo.min(alphas[i] - r);
        hi = hi.max(alphas[i] + r);
    }
    if lower_hint.is_finite() && lower_hint > lo && lower_hint <= hi {
        lo = lower_hint;
    }
    // ensure count(lo) < n
    if sturm_count(alphas, betas, lo) == n {
        lo -= (hi - lo).abs().max(1e-300);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            break;
        }
        if sturm_count(alphas, betas, mid) == n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Newton's method from above on the characteristic polynomial, safeguarded
/// by bisection, for the largest eigenvalue known to lie in `[lo, hi]`.
fn tridiag_top_in(alphas: &[f64], betas: &[f64], mut lo: f64, mut hi: f64) -> f64 {
    let n = alphas.len();
    let tiny = f64::EPSILON * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    hi += 4.0 * tiny;
    lo -= 4.0 * tiny;
    let mut x = hi;
    for _ in 0..200 {
        // q_i = alpha_i - x - b_{i-1}^2 / q_{i-1}; f'/f = sum dq_i / q_i
        let mut q = 1.0;
        let mut dq = 0.0;
        let mut below = 0;
        let mut ratio = 0.0;
        for i in 0..n {
            let (qn, dqn) = if i == 0 {
                (alphas[0] - x, -1.0)
            } else {
                let b2 = betas[i - 1] * betas[i - 1];
                (alphas[i] - x - b2 / q, -1.0 + b2 * dq / (q * q))
            };
            q = if qn == 0.0 { -tiny } else { qn };
            dq = dqn;
            if q < 0.0 {
                below += 1;
            }
            ratio += dq / q;
        }
        if below == n {
            hi = x;
            let next = x - 1.0 / ratio;
            let step = x - next;
            if !(next.is_finite()) || next <= lo || step < 0.0 {
                x = 0.5 * (lo + hi);
            } else if step <= 2.0 * f64::EPSILON * x.abs() {
                return next;
            } else {
                x = next;
            }
        } else {
            lo = x;
            x = 0.5 * (lo + hi);
        }
        if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            return 0.5 * (lo + hi);
        }
    }
    0.5 * (lo + hi)
}

/// Unit eigenvector of the tridiagonal for eigenvalue `theta`, by backward
/// recurrence from the last component.
fn tridiag_eigenvector(alphas: &[f64], betas: &[f64], theta: f64) -> Vec<f64> {
    let n = alphas.len();
    let mut y = vec![0.0; n];
    y[n - 1] = 1.0;
    for i in (1..n).rev() {
        let next = if i + 1 < n { betas[i] * y[i + 1] } else { 0.0 };
        let b = betas[i - 1];
        if b == 0.0 {
            // decoupled block: the upper part carries no weight
            break;
        }
        y[i - 1] = -((alphas[i] - theta) * y[i] + next) / b;
        if !y[i - 1].is_finite() {
            let mut z = vec![0.0; n];
            z[0] = 1.0;
            return z;
        }
        // keep the recurrence in range; only direction matters
        if y[i - 1].abs() > 1e150 {
            y.iter_mut().for_each(|v| *v *= 1e-150);
        }
    }
    let ny = norm(&y);
    y.iter_mut().for_each(|v| *v /= ny);
    y
}
