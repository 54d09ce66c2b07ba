//! Sliding-window maximum-eigenvalue stopping rule.
//!
//! At time `t` the statistic is
//!
//! ```text
//! max_{t-w < k < t, k >= 0}  lambda_1(S_t - S_k) / sigma0^2 - (t - k) d
//! ```
//!
//! where `S_t` is the running sum of outer products `x_i x_i^T`; this equals
//! `(t-k) [lambda_1(Sigma_hat_{t,k}) / sigma0^2 - d]`. The procedure stops at
//! the first `t` where the statistic reaches `b`.
//!
//! Outer-product sums are kept as checkpoints `C_k = sum_{i=B+1}^{k} x_i x_i^T`
//! relative to a base time `B` that only depends on `t` and `w`. Rebasing
//! recomputes the checkpoints from stored samples in the same order as the
//! incremental path, so a window rebuilt from its sample history is
//! bit-identical to one that was fed sample by sample.
//!
//! Candidates with `t - k < p` are evaluated through the `(t-k) x (t-k)` Gram
//! matrix of the most recent samples, which shares its nonzero spectrum with
//! `S_t - S_k`. Since `lambda_1(S_t - S_k)` is nondecreasing in `t - k`, the
//! scan is a branch-and-bound over candidate sizes: an evaluated size bounds
//! every smaller one from above. Each eigenvalue is a pure function of the
//! window contents, so pruning never changes the reported maximum.

use std::collections::VecDeque;

use crate::model::StreamSample;
use crate::numerics::{dot, largest_eigenvalue_2x2, lanczos_top, SymMatrix};
use crate::{Error, Result};

/// Relative Ritz-residual tolerance for candidate eigenvalues.
const LANCZOS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Window size; candidates satisfy `t - w < k < t`.
    pub w: usize,
    /// Drift subtracted per post-change sample.
    pub d: f64,
    /// Alarm threshold.
    pub b: f64,
    pub sigma0_sq: f64,
    /// Evaluate every `stride`-th candidate, starting from `k = t - 1`.
    pub stride: usize,
}

impl DetectorConfig {
    /// `(1 + sqrt(p / w))^2 + 0.1`: just above the upper edge of the null
    /// spectrum of a window-`w` sample covariance in dimension `p`.
    pub fn default_drift(p: usize, w: usize) -> f64 {
        (1.0 + (p as f64 / w as f64).sqrt()).powi(2) + 0.1
    }

    pub fn new(p: usize, w: usize, b: f64, sigma0_sq: f64) -> Self {
        Self {
            w,
            d: Self::default_drift(p, w),
            b,
            sigma0_sq,
            stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_threshold(mut self, b: f64) -> Self {
        self.b = b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.w < 2 {
            return Err(Error::InvalidConfig("window w must be at least 2".into()));
        }
        if !(self.stride >= 1 && self.stride < self.w) {
            return Err(Error::InvalidConfig("stride must satisfy 1 <= stride < w".into()));
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(Error::InvalidConfig("threshold b must be finite and >= 0".into()));
        }
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return Err(Error::InvalidConfig("drift d must be finite and >= 0".into()));
        }
        if !(self.sigma0_sq > 0.0 && self.sigma0_sq.is_finite()) {
            return Err(Error::InvalidConfig("sigma0^2 must be positive".into()));
        }
        Ok(())
    }

    /// Candidate sizes `n = t - k`: 1, 1 + stride, ... up to `min(w - 1, t)`.
    pub fn candidate_sizes(&self, t: u64) -> impl Iterator<Item = usize> {
        let max_n = (self.w - 1).min(t as usize);
        (1..=max_n).step_by(self.stride)
    }
}

fn base_time(t: u64, w: usize) -> u64 {
    let w = w as u64;
    if t + 1 < w {
        0
    } else {
        w * ((t + 1 - w) / w)
    }
}

/// Recent samples plus outer-product checkpoints for every `k` in the window.
#[derive(Debug, Clone)]
pub struct WindowState {
    dim: usize,
    w: usize,
    t: u64,
    base: u64,
    /// Last `2w` samples, oldest first; the newest is `x_t`.
    samples: VecDeque<Vec<f64>>,
    /// `(k, C_k)` for `k` in `[max(0, t - w + 1), t]`, oldest first.
    checkpoints: VecDeque<(u64, Vec<f64>)>,
    /// Gram matrix of the last `w - 1` samples, newest first, row stride
    /// `w - 1`; only kept when `dim > 2`.
    gram: Vec<f64>,
}

impl WindowState {
    pub fn new(dim: usize, w: usize) -> Self {
        assert!(dim > 0 && w >= 2);
        let mut checkpoints = VecDeque::with_capacity(w + 1);
        checkpoints.push_back((0, vec![0.0; dim * dim]));
        Self {
            dim,
            w,
            t: 0,
            base: 0,
            samples: VecDeque::with_capacity(2 * w + 1),
            checkpoints,
            gram: if dim > 2 { vec![0.0; (w - 1) * (w - 1)] } else { Vec::new() },
        }
    }

    fn uses_gram(&self) -> bool {
        !self.gram.is_empty()
    }

    /// Writes row/column 0 of the Gram matrix for the newest sample.
    fn fill_gram_head(&mut self) {
        let g = self.w - 1;
        let avail = self.samples.len().min(g);
        let newest = self.samples.len() - 1;
        for j in 0..avail {
            let v = dot(&self.samples[newest], &self.samples[newest - j]);
            self.gram[j] = v;
            self.gram[j * g] = v;
        }
    }

    fn rebuild_gram(&mut self) {
        if !self.uses_gram() || self.samples.is_empty() {
            return;
        }
        let g = self.w - 1;
        self.gram.iter_mut().for_each(|v| *v = 0.0);
        let avail = self.samples.len().min(g);
        let newest = self.samples.len() - 1;
        for i in 0..avail {
            for j in i..avail {
                let v = dot(&self.samples[newest - i], &self.samples[newest - j]);
                self.gram[i * g + j] = v;
                self.gram[j * g + i] = v;
            }
        }
    }

    fn shift_gram(&mut self) {
        let g = self.w - 1;
        for i in (0..g - 1).rev() {
            self.gram.copy_within(i * g..i * g + g - 1, (i + 1) * g + 1);
        }
    }

    /// Rebuilds the state at time `t` from its most recent samples (at least
    /// `min(t, 2w)` of them, oldest first).
    pub fn from_history(dim: usize, w: usize, t: u64, history: &[Vec<f64>]) -> Result<Self> {
        let needed = (t as usize).min(2 * w);
        if history.len() < needed {
            return Err(Error::InvalidInput(format!(
                "need {needed} samples of history, got {}",
                history.len()
            )));
        }
        let mut state = Self::new(dim, w);
        state.t = t;
        state.samples = history[history.len() - needed..].iter().cloned().collect();
        if let Some(bad) = state.samples.iter().find(|x| x.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        state.rebuild();
        state.rebuild_gram();
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn window(&self) -> usize {
        self.w
    }

    /// Stored samples, oldest first, ending with `x_t`.
    pub fn samples(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.samples.iter()
    }

    fn sample_at(&self, i: u64) -> &[f64] {
        let offset = (self.t - i) as usize;
        &self.samples[self.samples.len() - 1 - offset]
    }

    fn rebuild(&mut self) {
        let t = self.t;
        self.base = base_time(t, self.w);
        let first = t.saturating_sub(self.w as u64 - 1);
        let mut acc = SymMatrix::zeros(self.dim);
        self.checkpoints.clear();
        if self.base == first {
            self.checkpoints.push_back((first, acc.as_slice().to_vec()));
        }
        for i in self.base + 1..=t {
            acc.add_outer(self.sample_at(i), 1.0);
            if i >= first {
                self.checkpoints.push_back((i, acc.as_slice().to_vec()));
            }
        }
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        self.t += 1;
        if self.samples.len() == 2 * self.w {
            let mut recycled = self.samples.pop_front().expect("non-empty");
            recycled.copy_from_slice(x);
            self.samples.push_back(recycled);
        } else {
            self.samples.push_back(x.to_vec());
        }

        if self.uses_gram() {
            self.shift_gram();
            self.fill_gram_head();
        }
        if base_time(self.t, self.w) != self.base {
            self.rebuild();
            return Ok(());
        }
        let first = self.t.saturating_sub(self.w as u64 - 1);
        let mut next = if self.checkpoints.front().is_some_and(|c| c.0 < first) {
            self.checkpoints.pop_front().expect("non-empty").1
        } else {
            vec![0.0; self.dim * self.dim]
        };
        next.copy_from_slice(&self.checkpoints.back().expect("non-empty").1);
        add_outer_raw(&mut next, x, self.dim);
        self.checkpoints.push_back((self.t, next));
        Ok(())
    }

    fn checkpoint(&self, k: u64) -> &[f64] {
        let first = self.checkpoints.front().expect("non-empty").0;
        &self.checkpoints[(k - first) as usize].1
    }

    fn check_range(&self, k: u64) -> Result<()> {
        let lo = self.t.saturating_sub(self.w as u64 - 1);
        if self.t == 0 || k < lo || k >= self.t {
            return Err(Error::OutOfRange {
                index: k,
                lo,
                hi: self.t.saturating_sub(1),
            });
        }
        Ok(())
    }

    /// `S_t - S_k`, the sum of outer products of samples `k+1..=t`.
    pub fn suffix_outer_sum(&self, k: u64) -> Result<SymMatrix> {
        self.check_range(k)?;
        let (ct, ck) = (self.checkpoint(self.t), self.checkpoint(k));
        let n = self.dim;
        Ok(SymMatrix::from_upper(n, |i, j| ct[i * n + j] - ck[i * n + j]))
    }

    /// `Sigma_hat_{t,k} = (S_t - S_k) / (t - k)` for `t - w < k < t`.
    pub fn suffix_covariance(&self, k: u64) -> Result<SymMatrix> {
        let n = (self.t - k.min(self.t)) as f64;
        Ok(self.suffix_outer_sum(k)?.scaled(1.0 / n))
    }

    fn suffix_into(&self, k: u64, out: &mut [f64]) {
        let (ct, ck) = (self.checkpoint(self.t), self.checkpoint(k));
        for ((o, a), b) in out.iter_mut().zip(ct).zip(ck) {
            *o = a - b;
        }
    }
}

fn add_outer_raw(m: &mut [f64], x: &[f64], n: usize) {
    for i in 0..n {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        for (r, &xj) in m[i * n..(i + 1) * n].iter_mut().zip(x) {
            *r += xi * xj;
        }
    }
}

fn sym_matvec_raw(m: &[f64], stride: usize, n: usize, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(n) {
        *o = dot(&m[i * stride..i * stride + n], x);
    }
}

/// One entry of the statistic trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: u64,
    pub value: f64,
    pub k_hat: u64,
}

#[derive(Debug, Clone, Default)]
struct ScanScratch {
    diff: Vec<f64>,
    sizes: Vec<usize>,
    stack: Vec<(usize, usize, f64)>,
}

/// `lambda_1(S_t - S_k)` for `n = t - k`.
fn candidate_lambda(state: &WindowState, n: usize, scratch: &mut ScanScratch) -> f64 {
    let dim = state.dim;
    if state.uses_gram() && n < dim {
        let g = state.w - 1;
        let h = &state.gram;
        return match n {
            1 => h[0],
            2 => largest_eigenvalue_2x2(h[0], h[1], h[g + 1]),
            _ => lanczos_top(n, |x, y| sym_matvec_raw(h, g, n, x, y), None, LANCZOS_TOL).value,
        };
    }
    scratch.diff.resize(dim * dim, 0.0);
    state.suffix_into(state.t - n as u64, &mut scratch.diff);
    let d = &scratch.diff;
    match dim {
        1 => d[0],
        2 => largest_eigenvalue_2x2(d[0], d[1], d[3]),
        _ => lanczos_top(dim, |x, y| sym_matvec_raw(d, dim, dim, x, y), None, LANCZOS_TOL).value,
    }
}

/// Exact maximum over candidates when it is at least `level`, else `None`.
fn scan_with(
    state: &WindowState,
    cfg: &DetectorConfig,
    level: f64,
    scratch: &mut ScanScratch,
) -> Option<(f64, u64)> {
    let t = state.t;
    let mut sizes = std::mem::take(&mut scratch.sizes);
    sizes.clear();
    sizes.extend(cfg.candidate_sizes(t));
    let m = sizes.len();
    let value = |lambda: f64, n: usize| lambda / cfg.sigma0_sq - n as f64 * cfg.d;

    // (value, index); ties go to the smaller size, i.e. the largest k
    let mut best = (value(candidate_lambda(state, sizes[0], scratch), sizes[0]), 0);
    let consider = |v: f64, i: usize, best: &mut (f64, usize)| {
        if v > best.0 || (v == best.0 && i < best.1) {
            *best = (v, i);
        }
    };
    if m > 1 {
        let top = candidate_lambda(state, sizes[m - 1], scratch);
        consider(value(top, sizes[m - 1]), m - 1, &mut best);
        // (lo, hi, lambda at hi): sizes[lo..hi] not yet evaluated
        let mut stack = std::mem::take(&mut scratch.stack);
        stack.clear();
        stack.push((1, m - 1, top));
        while let Some((lo, hi, lambda_hi)) = stack.pop() {
            if lo >= hi {
                continue;
            }
            let bound = value(lambda_hi, sizes[lo]);
            if bound < level || bound < best.0 {
                continue;
            }
            let mid = lo + (hi - lo - 1) / 2;
            let lambda_mid = candidate_lambda(state, sizes[mid], scratch);
            consider(value(lambda_mid, sizes[mid]), mid, &mut best);
            stack.push((mid + 1, hi, lambda_hi));
            stack.push((lo, mid, lambda_mid));
        }
        scratch.stack = stack;
    }
    let k = t - sizes[best.1] as u64;
    scratch.sizes = sizes;
    (best.0 >= level).then_some((best.0, k))
}

/// `max_k (t-k) [lambda_1(Sigma_hat_{t,k}) / sigma0^2 - d]` over the strided
/// candidate set, with the maximizing `k` (ties go to the largest `k`).
pub fn scan_statistic(state: &WindowState, cfg: &DetectorConfig) -> Result<(f64, u64)> {
    if state.t == 0 {
        return Err(Error::InvalidInput("window is empty".into()));
    }
    Ok(scan_with(state, cfg, f64::NEG_INFINITY, &mut ScanScratch::default()).expect("unbounded level"))
}

/// Outcome of [`run_detector`].
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub stopped: bool,
    pub stopping_time: Option<u64>,
    pub k_hat: Option<u64>,
    pub trace: Vec<TracePoint>,
}

/// Streaming maximum-eigenvalue detector.
#[derive(Debug, Clone)]
pub struct MaxEigDetector {
    cfg: DetectorConfig,
    state: WindowState,
    scratch: ScanScratch,
}

impl MaxEigDetector {
    pub fn new(cfg: DetectorConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        let state = WindowState::new(dim, cfg.w);
        Ok(Self {
            cfg,
            state,
            scratch: ScanScratch::default(),
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn state(&self) -> &WindowState {
        &self.state
    }

    pub fn dim(&self) -> usize {
        self.state.dim
    }

    pub fn t(&self) -> u64 {
        self.state.t
    }

    /// Ingests `x_{t+1}` and evaluates the statistic at the new time.
    pub fn push(&mut self, x: &[f64]) -> Result<TracePoint> {
        self.state.push(x)?;
        let (value, k_hat) = scan_with(&self.state, &self.cfg, f64::NEG_INFINITY, &mut self.scratch)
            .expect("unbounded level");
        Ok(TracePoint {
            t: self.state.t,
            value,
            k_hat,
        })
    }

    /// Ingests a sample and reports the statistic only if it reaches `level`;
    /// `None` certifies that it is below. Cheaper than [`Self::push`] when
    /// `level` is high.
    pub fn push_above(&mut self, x: &[f64], level: f64) -> Result<Option<TracePoint>> {
        self.state.push(x)?;
        let t = self.state.t;
        Ok(scan_with(&self.state, &self.cfg, level, &mut self.scratch)
            .map(|(value, k_hat)| TracePoint { t, value, k_hat }))
    }

    /// Rejects masked samples; the full-data procedure needs every entry.
    pub fn push_sample(&mut self, sample: &StreamSample) -> Result<TracePoint> {
        if !sample.is_fully_observed() {
            return Err(Error::Stream {
                t: sample.t,
                message: "the max-eigenvalue detector requires fully observed samples".into(),
            });
        }
        sample.validate()?;
        self.push(&sample.x).map_err(|e| match e {
            Error::DimensionMismatch { expected, actual } => Error::Stream {
                t: sample.t,
                message: format!("dimension {actual} does not match stream dimension {expected}"),
            },
            other => other,
        })
    }

    /// Keeps only the sample history; resuming rebuilds a bit-identical window.
    pub fn suspend(self) -> SuspendedDetector {
        SuspendedDetector {
            cfg: self.cfg,
            dim: self.state.dim,
            t: self.state.t,
            history: self.state.samples.into_iter().collect(),
        }
    }
}

/// Compact form of a [`MaxEigDetector`] between bursts of work.
#[derive(Debug, Clone)]
pub struct SuspendedDetector {
    cfg: DetectorConfig,
    dim: usize,
    t: u64,
    history: Vec<Vec<f64>>,
}

impl SuspendedDetector {
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn resume(self) -> MaxEigDetector {
        let state = WindowState::from_history(self.dim, self.cfg.w, self.t, &self.history)
            .expect("history captured from a live window");
        MaxEigDetector {
            cfg: self.cfg,
            state,
            scratch: ScanScratch::default(),
        }
    }
}

/// Runs the stopping rule over a fully observed stream.
pub fn run_detector<I>(stream: I, cfg: &DetectorConfig) -> Result<DetectionReport>
where
    I: IntoIterator<Item = StreamSample>,
{
    let mut stream = stream.into_iter().peekable();
    let Some(first) = stream.peek() else {
        cfg.validate()?;
        return Ok(DetectionReport {
            stopped: false,
            stopping_time: None,
            k_hat: None,
            trace: Vec::new(),
        });
    };
    let mut detector = MaxEigDetector::new(cfg.clone(), first.dim())?;
    let mut trace = Vec::new();
    for sample in stream {
        let point = detector.push_sample(&sample)?;
        trace.push(point);
        if point.value >= cfg.b {
            return Ok(DetectionReport {
                stopped: true,
                stopping_time: Some(point.t),
                k_hat: Some(point.k_hat),
                trace,
            });
        }
    }
    Ok(DetectionReport {
        stopped: false,
        stopping_time: None,
        k_hat: None,
        trace,
    })
}
