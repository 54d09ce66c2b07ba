//! Observation streams and the Gaussian pre/post-change generators.
//!
//! Before the change samples are `N(0, sigma0^2 I_p)`; after it they are
//! `N(0, sigma0^2 I_p + Sigma)` with a rank-`s` signal covariance
//! `Sigma = U diag(lambda) U^T`.

mod io;

pub use io::{read_rows, read_stream, write_rows, write_stream, parse_stream, render_stream};

use crate::numerics::{sym_eig, Matrix, SymMatrix};
use crate::rng::{fill_standard_normal, purpose_seed, rng_from_seed, Purpose, SimRng};
use crate::{Error, Result};

/// One observation `x_t`; `mask[i] == false` marks entry `i` as missing
/// (its value is stored as NaN).
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample {
    pub t: u64,
    pub x: Vec<f64>,
    pub mask: Option<Vec<bool>>,
}

impl StreamSample {
    pub fn new(t: u64, x: Vec<f64>) -> Self {
        Self { t, x, mask: None }
    }

    /// Builds a masked sample; unobserved values are replaced by NaN and a
    /// mask with no missing entries is dropped.
    pub fn with_mask(t: u64, mut x: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                actual: mask.len(),
            });
        }
        for (v, &m) in x.iter_mut().zip(&mask) {
            if !m {
                *v = f64::NAN;
            }
        }
        let mask = if mask.iter().all(|&m| m) { None } else { Some(mask) };
        Ok(Self { t, x, mask })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    #[inline]
    pub fn is_observed(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.is_none()
    }

    pub fn observed_count(&self) -> usize {
        match &self.mask {
            None => self.x.len(),
            Some(m) => m.iter().filter(|&&b| b).count(),
        }
    }

    /// Observed entries must be finite.
    pub fn validate(&self) -> Result<()> {
        if let Some((i, v)) = self
            .x
            .iter()
            .enumerate()
            .find(|&(i, v)| self.is_observed(i) && !v.is_finite())
        {
            return Err(Error::Stream {
                t: self.t,
                message: format!("observed entry {i} is not finite ({v})"),
            });
        }
        Ok(())
    }
}

/// Scenario for synthetic streams. `kappa = None` means no change.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub p: usize,
    pub sigma0_sq: f64,
    pub s: usize,
    pub rho: f64,
    pub kappa: Option<u64>,
    pub horizon: u64,
    pub missing_fraction: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// A pure-noise scenario.
    pub fn null(p: usize, sigma0_sq: f64, horizon: u64, seed: u64) -> Self {
        Self {
            p,
            sigma0_sq,
            s: 0,
            rho: 0.0,
            kappa: None,
            horizon,
            missing_fraction: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidConfig("p must be positive".into()));
        }
        if self.s > self.p {
            return Err(Error::InvalidConfig(format!(
                "signal rank s={} exceeds p={}",
                self.s, self.p
            )));
        }
        if !(self.sigma0_sq > 0.0 && self.sigma0_sq.is_finite()) {
            return Err(Error::InvalidConfig("sigma0^2 must be positive".into()));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig("rho must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::InvalidConfig(
                "missing fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Whether `t` (1-based) is a post-change time.
    pub fn is_post_change(&self, t: u64) -> bool {
        self.kappa.is_some_and(|k| t > k)
    }
}

/// Low-rank signal covariance with its eigendecomposition.
#[derive(Debug, Clone)]
pub struct SignalCovariance {
    pub sigma: SymMatrix,
    /// `p x s`, orthonormal columns.
    pub basis: Matrix,
    /// Positive eigenvalues, non-increasing.
    pub scales: Vec<f64>,
}

impl SignalCovariance {
    pub fn zero(p: usize) -> Self {
        Self {
            sigma: SymMatrix::zeros(p),
            basis: Matrix::zeros(p, 0),
            scales: Vec::new(),
        }
    }

    /// `U diag(scales) U^T` from an orthonormal basis.
    pub fn from_parts(basis: Matrix, scales: Vec<f64>) -> Result<Self> {
        if basis.cols() != scales.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.cols(),
                actual: scales.len(),
            });
        }
        if scales.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidInput("signal scales must be positive".into()));
        }
        let p = basis.rows();
        let sigma = SymMatrix::from_upper(p, |i, j| {
            (0..scales.len())
                .map(|k| basis.get(i, k) * scales[k] * basis.get(j, k))
                .sum()
        });
        Ok(Self {
            sigma,
            basis,
            scales,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    pub fn rank(&self) -> usize {
        self.scales.len()
    }

    /// `||Sigma||`, the largest eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        self.scales.first().copied().unwrap_or(0.0)
    }

    /// Same eigenvectors, eigenvalues rescaled so that `||Sigma|| = target`.
    pub fn with_spectral_norm(&self, target: f64) -> Result<Self> {
        let top = self.spectral_norm();
        if top == 0.0 || target <= 0.0 {
            return Ok(Self::zero(self.dim()));
        }
        let c = target / top;
        Self::from_parts(self.basis.clone(), self.scales.iter().map(|l| l * c).collect())
    }
}

/// `Sigma = rho G G^T / s` with `G` a `p x s` standard normal matrix drawn
/// from `seed`. `rho = 0` or `s = 0` gives the zero matrix.
pub fn make_signal_covariance(p: usize, s: usize, rho: f64, seed: u64) -> Result<SignalCovariance> {
    if s > p {
        return Err(Error::InvalidConfig(format!("signal rank s={s} exceeds p={p}")));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidConfig("rho must be non-negative".into()));
    }
    if s == 0 || rho == 0.0 {
        return Ok(SignalCovariance::zero(p));
    }
    let mut rng = rng_from_seed(purpose_seed(seed, Purpose::Signal));
    let mut g = vec![0.0; p * s];
    fill_standard_normal(&mut rng, &mut g);
    let g = Matrix::from_row_major(p, s, g)?;

    // G^T G = W D W^T  =>  U = G W D^{-1/2},  Sigma = U (rho D / s) U^T
    let small = sym_eig(&g.gram())?;
    let w = small.eigenvectors.expect("requested");
    if small.eigenvalues[s - 1] <= 1e-12 * small.eigenvalues[0] {
        return Err(Error::Degenerate("signal factor is rank deficient".into()));
    }
    let gw = g.matmul(&w)?;
    let basis = Matrix::from_fn(p, s, |i, j| gw.get(i, j) / small.eigenvalues[j].sqrt());
    let scales: Vec<f64> = small.eigenvalues.iter().map(|d| rho * d / s as f64).collect();

    let sigma = SymMatrix::from_upper(p, |i, j| {
        rho * (0..s).map(|k| g.get(i, k) * g.get(j, k)).sum::<f64>() / s as f64
    });
    Ok(SignalCovariance {
        sigma,
        basis,
        scales,
    })
}

/// Iterator over a synthetic stream.
///
/// Noise, post-change signal coefficients and masks use independent random
/// streams, so scenarios differing only in `rho` share their noise exactly.
#[derive(Debug, Clone)]
pub struct StreamGenerator {
    cfg: ScenarioConfig,
    signal: SignalCovariance,
    sqrt_scales: Vec<f64>,
    noise_rng: SimRng,
    coef_rng: SimRng,
    mask_rng: SimRng,
    sigma0: f64,
    t: u64,
    coef: Vec<f64>,
}

impl StreamGenerator {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let signal = make_signal_covariance(cfg.p, cfg.s, cfg.rho, cfg.seed)?;
        Self::with_signal(cfg, signal)
    }

    /// Uses a caller-supplied signal covariance instead of drawing one.
    pub fn with_signal(cfg: ScenarioConfig, signal: SignalCovariance) -> Result<Self> {
        cfg.validate()?;
        if signal.dim() != cfg.p {
            return Err(Error::DimensionMismatch {
                expected: cfg.p,
                actual: signal.dim(),
            });
        }
        let sqrt_scales = signal.scales.iter().map(|l| l.sqrt()).collect();
        let coef = vec![0.0; signal.rank()];
        Ok(Self {
            noise_rng: rng_from_seed(purpose_seed(cfg.seed, Purpose::Noise)),
            coef_rng: rng_from_seed(purpose_seed(cfg.seed, Purpose::Coefficients)),
            mask_rng: rng_from_seed(purpose_seed(cfg.seed, Purpose::Mask)),
            sigma0: cfg.sigma0_sq.sqrt(),
            cfg,
            signal,
            sqrt_scales,
            t: 0,
            coef,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn signal(&self) -> &SignalCovariance {
        &self.signal
    }

    /// Draws the next fully observed vector into `out`, ignoring the horizon
    /// and the mask. Returns its time index.
    pub fn next_into(&mut self, out: &mut [f64]) -> u64 {
        self.t += 1;
        fill_standard_normal(&mut self.noise_rng, out);
        for v in out.iter_mut() {
            *v *= self.sigma0;
        }
        if self.cfg.is_post_change(self.t) && self.signal.rank() > 0 {
            fill_standard_normal(&mut self.coef_rng, &mut self.coef);
            for (c, s) in self.coef.iter_mut().zip(&self.sqrt_scales) {
                *c *= s;
            }
            let u = &self.signal.basis;
            for (i, o) in out.iter_mut().enumerate() {
                let row = u.row(i);
                *o += crate::numerics::dot(row, &self.coef);
            }
        }
        self.t
    }
}

impl Iterator for StreamGenerator {
    type Item = StreamSample;

    fn next(&mut self) -> Option<StreamSample> {
        if self.t >= self.cfg.horizon {
            return None;
        }
        let mut x = vec![0.0; self.cfg.p];
        let t = self.next_into(&mut x);
        if self.cfg.missing_fraction > 0.0 {
            let keep = 1.0 - self.cfg.missing_fraction;
            let mask: Vec<bool> = (0..self.cfg.p)
                .map(|_| rand::Rng::random::<f64>(&mut self.mask_rng) < keep)
                .collect();
            return Some(StreamSample::with_mask(t, x, mask).expect("lengths match"));
        }
        Some(StreamSample::new(t, x))
    }
}

/// Materializes the whole stream described by `cfg`.
pub fn generate_stream(cfg: &ScenarioConfig) -> Result<Vec<StreamSample>> {
    Ok(StreamGenerator::new(cfg.clone())?.collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{largest_eigenvalue, norm, numerical_rank, DEFAULT_RANK_TOL};

    fn cfg(p: usize) -> ScenarioConfig {
        ScenarioConfig {
            p,
            sigma0_sq: 1.0,
            s: 2,
            rho: 1.0,
            kappa: None,
            horizon: 100,
            missing_fraction: 0.0,
            seed: 5,
        }
    }

    #[test]
    fn signal_covariance_has_requested_rank() {
        let sig = make_signal_covariance(100, 3, 2.0, 9).unwrap();
        assert_eq!(numerical_rank(&sig.sigma, DEFAULT_RANK_TOL).unwrap(), 3);
        let rebuilt = SignalCovariance::from_parts(sig.basis.clone(), sig.scales.clone()).unwrap();
        assert!(rebuilt.sigma.max_abs_diff(&sig.sigma) <= 1e-10 * sig.sigma.max_abs().max(1.0));
        let utu = sig.basis.transpose().matmul(&sig.basis).unwrap();
        assert!(utu.max_abs_diff(&Matrix::identity(3)) < 1e-12);
        let top = largest_eigenvalue(&sig.sigma).unwrap();
        assert!((top - sig.spectral_norm()).abs() < 1e-10 * top);
    }

    #[test]
    fn zero_signal_and_determinism() {
        let z = make_signal_covariance(6, 2, 0.0, 1).unwrap();
        assert_eq!(z.rank(), 0);
        assert_eq!(z.sigma.max_abs(), 0.0);
        let a = make_signal_covariance(5, 2, 1.0, 42).unwrap();
        let b = make_signal_covariance(5, 2, 1.0, 42).unwrap();
        assert_eq!(a.sigma, b.sigma);
        assert!(matches!(
            make_signal_covariance(3, 4, 1.0, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn rescaling_to_spectral_norm() {
        let sig = make_signal_covariance(10, 3, 1.0, 2).unwrap();
        let r = sig.with_spectral_norm(4.0).unwrap();
        assert!((r.spectral_norm() - 4.0).abs() < 1e-12);
        assert!((largest_eigenvalue(&r.sigma).unwrap() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn streams_are_deterministic() {
        let mut c = cfg(4);
        c.kappa = Some(50);
        c.missing_fraction = 0.2;
        // NaN placeholders defeat PartialEq, so compare the rendered files
        let a = render_stream(&generate_stream(&c).unwrap(), None);
        let b = render_stream(&generate_stream(&c).unwrap(), None);
        assert!(a == b, "streams differ");
        let s = generate_stream(&c).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.windows(2).all(|w| w[0].t < w[1].t));
        assert_eq!(s[0].t, 1);
    }

    #[test]
    fn null_stream_covariance_is_isotropic() {
        let mut c = cfg(3);
        c.horizon = 100_000;
        c.sigma0_sq = 2.0;
        c.kappa = Some(c.horizon);
        let n = c.horizon as f64;
        let mut acc = SymMatrix::zeros(3);
        for s in StreamGenerator::new(c.clone()).unwrap() {
            acc.add_outer(&s.x, 1.0);
        }
        let cov = acc.scaled(1.0 / n);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 2.0 } else { 0.0 };
                // var(x_i x_j) = sigma^4 (1 + [i == j])
                let se = (2.0 * if i == j { 2.0 } else { 1.0 } / n).sqrt() * 2.0_f64.sqrt();
                assert!((cov.get(i, j) - expected).abs() < 3.0 * se, "({i},{j})");
            }
        }
    }

    #[test]
    fn chi_square_mean_under_null_and_scaled_after_change() {
        let n = 100_000;
        let mut c = cfg(5);
        c.horizon = n;
        c.rho = 3.0;
        let q = {
            let v = vec![1.0, -2.0, 0.5, 0.0, 1.0];
            let nv = norm(&v);
            v.into_iter().map(|x| x / nv).collect::<Vec<_>>()
        };
        // null
        let mean_null: f64 = StreamGenerator::new(c.clone())
            .unwrap()
            .map(|s| crate::numerics::dot(&q, &s.x).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((mean_null - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());

        // change at 0: (q^T x)^2 ~ (1 + q^T Sigma q) chi^2(1)
        c.kappa = Some(0);
        let generator = StreamGenerator::new(c.clone()).unwrap();
        let scale = 1.0 + generator.signal().sigma.quad_form(&q);
        let mean_post: f64 = generator
            .map(|s| crate::numerics::dot(&q, &s.x).powi(2))
            .sum::<f64>()
            / n as f64;
        let se = scale * (2.0 / n as f64).sqrt();
        assert!((mean_post - scale).abs() < 3.0 * se, "{mean_post} vs {scale}");
    }

    #[test]
    fn large_signal_raises_top_eigenvalue() {
        let mut c = cfg(10);
        c.kappa = Some(0);
        c.rho = 20.0;
        c.horizon = 2000;
        let mut acc = SymMatrix::zeros(10);
        for s in StreamGenerator::new(c.clone()).unwrap() {
            acc.add_outer(&s.x, 1.0 / 2000.0);
        }
        assert!(largest_eigenvalue(&acc).unwrap() > 10.0);
    }

    #[test]
    fn missing_fraction_is_respected() {
        let mut c = cfg(100);
        c.horizon = 1000;
        c.missing_fraction = 0.3;
        let observed: usize = generate_stream(&c)
            .unwrap()
            .iter()
            .map(StreamSample::observed_count)
            .sum();
        let missing = 1.0 - observed as f64 / 100_000.0;
        assert!((0.28..=0.32).contains(&missing), "{missing}");
    }

    #[test]
    fn invalid_configs() {
        let mut c = cfg(3);
        c.missing_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = cfg(3);
        c.s = 4;
        assert!(c.validate().is_err());
    }
}
