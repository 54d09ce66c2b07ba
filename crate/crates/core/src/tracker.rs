//! Subspace tracking with missing data.
//!
//! Each sample is modelled as `x_t = U beta_t + noise` for an `s`-dimensional
//! basis `U` that is refined online by rank-one geodesic steps on the
//! Grassmannian (GROUSE). The weights `beta_t`, fitted by least squares on
//! the observed coordinates, give two change statistics: `max_i |beta_i|`
//! and `||beta||^2`.

use crate::model::StreamSample;
use crate::numerics::{dot, norm, orthonormalize, Matrix, SymMatrix};
use crate::rng::{fill_standard_normal, purpose_seed, rng_from_seed, Purpose};
use crate::{Error, Result};

const ORTHO_TOL: f64 = 1e-8;

/// `eta_t = eta0 / (1 + t / t0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub eta0: f64,
    pub t0: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { eta0: 0.1, t0: 100.0 }
    }
}

impl StepSchedule {
    pub fn eta(&self, t: u64) -> f64 {
        self.eta0 / (1.0 + t as f64 / self.t0)
    }

    /// Constant step `eta`.
    pub fn constant(eta: f64) -> Self {
        Self {
            eta0: eta,
            t0: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GrouseState {
    u: Matrix,
    pub schedule: StepSchedule,
    /// Number of updates applied so far.
    pub t: u64,
}

impl GrouseState {
    /// Random orthonormal `p x s` starting basis.
    pub fn new(p: usize, s: usize, schedule: StepSchedule, seed: u64) -> Result<Self> {
        if s == 0 || s > p {
            return Err(Error::InvalidConfig(format!("subspace rank s={s} must lie in 1..={p}")));
        }
        let mut rng = rng_from_seed(purpose_seed(seed, Purpose::Basis));
        let mut g = vec![0.0; p * s];
        fill_standard_normal(&mut rng, &mut g);
        let u = orthonormalize(&Matrix::from_row_major(p, s, g)?)?;
        Ok(Self { u, schedule, t: 0 })
    }

    pub fn from_basis(u: Matrix, schedule: StepSchedule) -> Result<Self> {
        let u = orthonormalize(&u)?;
        Ok(Self { u, schedule, t: 0 })
    }

    pub fn basis(&self) -> &Matrix {
        &self.u
    }

    pub fn p(&self) -> usize {
        self.u.rows()
    }

    pub fn s(&self) -> usize {
        self.u.cols()
    }

    /// `max |U^T U - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        self.u.gram().max_abs_diff(&SymMatrix::identity(self.s()))
    }

    /// `||(I - U U^T) V||` (spectral norm) for an orthonormal `V`.
    pub fn distance_to(&self, v: &Matrix) -> Result<f64> {
        let proj = self.u.matmul(&self.u.transpose().matmul(v)?)?;
        let resid = Matrix::from_fn(v.rows(), v.cols(), |i, j| v.get(i, j) - proj.get(i, j));
        crate::numerics::spectral_norm(&resid)
    }
}

/// Least-squares weights and the zero-filled residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub beta: Vec<f64>,
    pub residual: Vec<f64>,
}

/// In-place Cholesky of a small dense SPD matrix; `None` when a pivot is not
/// safely positive.
fn cholesky_solve(mut a: Vec<f64>, n: usize, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 1e-10 * scale) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * n + k] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= a[k * n + i] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    Some(b)
}

/// Fits `beta` on the observed rows of `U`. Returns `Ok(None)` when fewer
/// than `s` entries are observed or the observed rows are rank deficient.
pub fn estimate_weights(state: &GrouseState, sample: &StreamSample) -> Result<Option<Weights>> {
    let (p, s) = (state.p(), state.s());
    if sample.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: sample.dim(),
        });
    }
    let u = &state.u;
    let beta = if sample.is_fully_observed() {
        u.t_matvec(&sample.x)?
    } else {
        if sample.observed_count() < s {
            return Ok(None);
        }
        let mut gram = vec![0.0; s * s];
        let mut rhs = vec![0.0; s];
        for i in (0..p).filter(|&i| sample.is_observed(i)) {
            let row = u.row(i);
            let xi = sample.x[i];
            for a in 0..s {
                rhs[a] += row[a] * xi;
                for b in 0..=a {
                    gram[a * s + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..s {
            for b in 0..a {
                gram[b * s + a] = gram[a * s + b];
            }
        }
        match cholesky_solve(gram, s, rhs) {
            Some(beta) => beta,
            None => return Ok(None),
        }
    };
    let residual = (0..p)
        .map(|i| {
            if sample.is_observed(i) {
                sample.x[i] - dot(u.row(i), &beta)
            } else {
                0.0
            }
        })
        .collect();
    Ok(Some(Weights { beta, residual }))
}

/// Geodesic step with an explicit step size.
pub fn grouse_step(state: &mut GrouseState, weights: &Weights, eta: f64) -> Result<()> {
    let beta_norm = norm(&weights.beta);
    let r_norm = norm(&weights.residual);
    state.t += 1;
    if beta_norm <= f64::MIN_POSITIVE || r_norm <= f64::MIN_POSITIVE {
        return Ok(());
    }
    let (p, s) = (state.p(), state.s());
    let q = state.u.matvec(&weights.beta)?;
    let q_norm = norm(&q);
    let sigma = r_norm * q_norm;
    let (c, sn) = ((sigma * eta).cos() - 1.0, (sigma * eta).sin());
    let mut data = state.u.as_slice().to_vec();
    for i in 0..p {
        let dir = c * q[i] / q_norm + sn * weights.residual[i] / r_norm;
        if dir == 0.0 {
            continue;
        }
        for k in 0..s {
            data[i * s + k] += dir * weights.beta[k] / beta_norm;
        }
    }
    state.u = Matrix::from_row_major(p, s, data)?;
    if state.orthonormality_error() > ORTHO_TOL {
        state.u = orthonormalize(&state.u)?;
    }
    Ok(())
}

/// Geodesic step with the scheduled step size.
pub fn grouse_update(state: &mut GrouseState, weights: &Weights) -> Result<()> {
    let eta = state.schedule.eta(state.t);
    grouse_step(state, weights, eta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerStats {
    pub beta: Vec<f64>,
    pub stat_max: f64,
    pub stat_norm: f64,
}

impl TrackerStats {
    pub fn from_beta(beta: Vec<f64>) -> Self {
        let stat_max = beta.iter().fold(0.0, |a: f64, b| a.max(b.abs()));
        let stat_norm = dot(&beta, &beta);
        Self {
            beta,
            stat_max,
            stat_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackerStatistic {
    /// `max_i |beta_i|`.
    Max,
    /// `||beta||^2`.
    Norm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlarmRule {
    /// Alarm once the statistic exceeds `threshold` on `run` consecutive
    /// non-skipped samples.
    Persistence {
        statistic: TrackerStatistic,
        threshold: f64,
        run: usize,
    },
    /// CUSUM on `||beta||^2`: `S = max(0, S + ||beta||^2 - drift)`.
    Cusum { drift: f64, threshold: f64 },
    Never,
}

impl AlarmRule {
    pub fn persistence(threshold: f64) -> Self {
        AlarmRule::Persistence {
            statistic: TrackerStatistic::Norm,
            threshold,
            run: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    /// NaN for skipped samples.
    pub stat_max: f64,
    pub stat_norm: f64,
    pub observed_count: usize,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerReport {
    pub trace: Vec<TraceRow>,
    pub alarm_time: Option<u64>,
}

pub const TRACE_HEADER: &str = "t,stat_max,stat_norm,observed_count,skipped";

impl TrackerReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.t,
                r.stat_max,
                r.stat_norm,
                r.observed_count,
                u8::from(r.skipped)
            ));
        }
        out
    }

    /// Non-skipped values of one statistic for `t` in `[lo, hi]`.
    pub fn values(&self, statistic: TrackerStatistic, lo: u64, hi: u64) -> Vec<f64> {
        self.trace
            .iter()
            .filter(|r| !r.skipped && r.t >= lo && r.t <= hi)
            .map(|r| match statistic {
                TrackerStatistic::Max => r.stat_max,
                TrackerStatistic::Norm => r.stat_norm,
            })
            .collect()
    }
}

/// Streaming tracker: weights, statistics, basis update, alarm bookkeeping.
#[derive(Debug, Clone)]
pub struct Tracker {
    state: GrouseState,
    rule: AlarmRule,
    run: usize,
    cusum: f64,
    alarm_time: Option<u64>,
}

impl Tracker {
    pub fn new(state: GrouseState, rule: AlarmRule) -> Self {
        Self {
            state,
            rule,
            run: 0,
            cusum: 0.0,
            alarm_time: None,
        }
    }

    pub fn state(&self) -> &GrouseState {
        &self.state
    }

    pub fn alarm_time(&self) -> Option<u64> {
        self.alarm_time
    }

    pub fn push(&mut self, sample: &StreamSample) -> Result<TraceRow> {
        sample.validate()?;
        let observed_count = sample.observed_count();
        let Some(weights) = estimate_weights(&self.state, sample)? else {
            return Ok(TraceRow {
                t: sample.t,
                stat_max: f64::NAN,
                stat_norm: f64::NAN,
                observed_count,
                skipped: true,
            });
        };
        let stats = TrackerStats::from_beta(weights.beta.clone());
        grouse_update(&mut self.state, &weights)?;
        let fired = match self.rule {
            AlarmRule::Persistence {
                statistic,
                threshold,
                run,
            } => {
                let v = match statistic {
                    TrackerStatistic::Max => stats.stat_max,
                    TrackerStatistic::Norm => stats.stat_norm,
                };
                self.run = if v > threshold { self.run + 1 } else { 0 };
                self.run >= run.max(1)
            }
            AlarmRule::Cusum { drift, threshold } => {
                self.cusum = (self.cusum + stats.stat_norm - drift).max(0.0);
                self.cusum >= threshold
            }
            AlarmRule::Never => false,
        };
        if fired && self.alarm_time.is_none() {
            self.alarm_time = Some(sample.t);
        }
        Ok(TraceRow {
            t: sample.t,
            stat_max: stats.stat_max,
            stat_norm: stats.stat_norm,
            observed_count,
            skipped: false,
        })
    }
}

/// Tracks the whole stream from a random rank-`s` basis drawn from `seed`.
/// The trace covers every sample; the alarm time is the first firing.
pub fn run_tracker<I>(
    stream: I,
    s: usize,
    schedule: StepSchedule,
    rule: AlarmRule,
    seed: u64,
) -> Result<TrackerReport>
where
    I: IntoIterator<Item = StreamSample>,
{
    let mut stream = stream.into_iter().peekable();
    let Some(first) = stream.peek() else {
        return Ok(TrackerReport {
            trace: Vec::new(),
            alarm_time: None,
        });
    };
    let state = GrouseState::new(first.dim(), s, schedule, seed)?;
    let mut tracker = Tracker::new(state, rule);
    let mut trace = Vec::new();
    for sample in stream {
        let row = tracker.push(&sample).map_err(|e| match e {
            Error::DimensionMismatch { expected, actual } => Error::Stream {
                t: sample.t,
                message: format!("dimension {actual} does not match stream dimension {expected}"),
            },
            other => other,
        })?;
        trace.push(row);
    }
    Ok(TrackerReport {
        trace,
        alarm_time: tracker.alarm_time,
    })
}

/// Empirical `q`-quantile (nearest rank) of the finite values.
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() || !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidInput("quantile of an empty sample".into()));
    }
    v.sort_by(f64::total_cmp);
    let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    Ok(v[idx])
}
