//! Monte Carlo harness: run-length estimation, threshold calibration and the
//! experiment sweeps.
//!
//! Replicate `r` of a run with master seed `m` draws its stream from
//! `child_seed(m, r)`. Replicates run in parallel and are reduced in index
//! order, so results do not depend on the number of worker threads.
//!
//! Calibration keeps, for every null replicate, the sequence of record values
//! of the detection statistic. The stopping time for threshold `b` is the time
//! of the first record at or above `b`, so one pass over a replicate answers
//! every threshold below its current record; replicates are only extended
//! when a larger threshold needs them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::analysis::{arl_lower_bound, edd_approx, BoundInputs, EddForm};
use crate::cusum::build_eps_net;
use crate::detector::{DetectorConfig, MaxEigDetector, SuspendedDetector, TracePoint};
use crate::model::{make_signal_covariance, ScenarioConfig, SignalCovariance, StreamGenerator};
use crate::rng::{child_seed, purpose_seed, rng_from_seed, Purpose};
use crate::sketch::{make_nested_operators, SketchOperator};
use crate::tracker::{empirical_quantile, run_tracker, AlarmRule, StepSchedule, TrackerStatistic};
use crate::{Error, Result};

/// Null runs are truncated at this multiple of the target ARL.
pub const CAP_FACTOR: f64 = 20.0;

/// Version string recorded in metadata sidecars.
pub fn version() -> String {
    format!("{}-{}", env!("CARGO_PKG_VERSION"), env!("SPIKEWATCH_GIT_REV"))
}

/// Stream recipe for Monte Carlo replicates: a scenario, an optional signal
/// shared by all replicates (otherwise each replicate draws its own from its
/// seed) and an optional sketch applied to every sample.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub scenario: ScenarioConfig,
    pub signal: Option<SignalCovariance>,
    pub sketch: Option<Arc<SketchOperator>>,
}

impl Experiment {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self {
            scenario,
            signal: None,
            sketch: None,
        }
    }

    pub fn with_signal(mut self, signal: SignalCovariance) -> Self {
        self.signal = Some(signal);
        self
    }

    pub fn with_sketch(mut self, op: SketchOperator) -> Self {
        self.sketch = Some(Arc::new(op));
        self
    }

    /// Dimension seen by the detector.
    pub fn dim(&self) -> usize {
        self.sketch.as_ref().map_or(self.scenario.p, |op| op.m())
    }

    fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.scenario.missing_fraction > 0.0 {
            return Err(Error::InvalidConfig(
                "Monte Carlo replicates of the detector need fully observed samples".into(),
            ));
        }
        if let Some(op) = &self.sketch {
            if op.p() != self.scenario.p {
                return Err(Error::DimensionMismatch {
                    expected: self.scenario.p,
                    actual: op.p(),
                });
            }
        }
        Ok(())
    }

    fn source(&self, master: u64, index: u64) -> Result<ReplicateSource> {
        let cfg = ScenarioConfig {
            seed: child_seed(master, index),
            horizon: u64::MAX,
            ..self.scenario.clone()
        };
        let gen = match &self.signal {
            Some(sig) => StreamGenerator::with_signal(cfg, sig.clone())?,
            None => StreamGenerator::new(cfg)?,
        };
        let p = self.scenario.p;
        Ok(ReplicateSource {
            gen,
            op: self.sketch.clone(),
            raw: vec![0.0; p],
            out: vec![0.0; self.dim()],
        })
    }
}

#[derive(Debug, Clone)]
struct ReplicateSource {
    gen: StreamGenerator,
    op: Option<Arc<SketchOperator>>,
    raw: Vec<f64>,
    out: Vec<f64>,
}

impl ReplicateSource {
    fn next(&mut self) -> &[f64] {
        match &self.op {
            None => {
                self.gen.next_into(&mut self.out);
                &self.out
            }
            Some(op) => {
                self.gen.next_into(&mut self.raw);
                op.apply_into(&self.raw, &mut self.out).expect("dimensions checked");
                &self.out
            }
        }
    }
}

/// Mean of (possibly censored) stopping times.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLengthEstimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(replicates)`.
    pub stderr: f64,
    pub replicates: usize,
    /// Runs that reached the cap without stopping; counted at the cap.
    pub censored: usize,
    pub cap: u64,
}

impl RunLengthEstimate {
    pub fn from_times(times: &[u64], cap: u64) -> Self {
        let values: Vec<f64> = times.iter().map(|&t| t.min(cap) as f64).collect();
        let (mean, stderr) = mean_stderr(&values);
        Self {
            mean,
            stderr,
            replicates: times.len(),
            censored: times.iter().filter(|&&t| t >= cap).count(),
            cap,
        }
    }
}

/// Sample mean and `sd / sqrt(n)`.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Bootstrap standard error of the mean.
pub fn bootstrap_stderr(values: &[f64], resamples: usize, seed: u64) -> f64 {
    let n = values.len();
    if n < 2 || resamples < 2 {
        return f64::NAN;
    }
    let mut rng = rng_from_seed(seed);
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let (_, se) = mean_stderr(&means);
    se * (resamples as f64).sqrt()
}

/// Time at which replicate `index` first reaches `cfg.b`, or `cap` if it
/// never does.
fn stopping_time(cfg: &DetectorConfig, exp: &Experiment, master: u64, index: u64, cap: u64) -> Result<u64> {
    let mut source = exp.source(master, index)?;
    let mut det = MaxEigDetector::new(cfg.clone(), exp.dim())?;
    while det.t() < cap {
        if det.push_above(source.next(), cfg.b)?.is_some() {
            return Ok(det.t());
        }
    }
    Ok(cap)
}

fn stopping_times(cfg: &DetectorConfig, exp: &Experiment, replicates: usize, seed: u64, cap: u64) -> Result<Vec<u64>> {
    cfg.validate()?;
    exp.validate()?;
    if cap == 0 {
        return Err(Error::InvalidConfig("cap must be positive".into()));
    }
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| stopping_time(cfg, exp, seed, r, cap))
        .collect()
}

/// Mean stopping time on a change-free scenario.
pub fn estimate_arl(
    cfg: &DetectorConfig,
    exp: &Experiment,
    replicates: usize,
    seed: u64,
    cap: u64,
) -> Result<RunLengthEstimate> {
    if exp.scenario.kappa.is_some() {
        return Err(Error::InvalidConfig("ARL estimation needs a scenario without change".into()));
    }
    Ok(RunLengthEstimate::from_times(&stopping_times(cfg, exp, replicates, seed, cap)?, cap))
}

/// Mean stopping time with the change at time 0.
pub fn estimate_edd(
    cfg: &DetectorConfig,
    exp: &Experiment,
    replicates: usize,
    seed: u64,
    cap: u64,
) -> Result<RunLengthEstimate> {
    if exp.scenario.kappa != Some(0) {
        return Err(Error::InvalidConfig("EDD estimation needs kappa = 0".into()));
    }
    Ok(RunLengthEstimate::from_times(&stopping_times(cfg, exp, replicates, seed, cap)?, cap))
}

/// One null replicate as a record sequence, extended on demand.
#[derive(Debug)]
struct RecordRun {
    detector: Option<SuspendedDetector>,
    source: ReplicateSource,
    records: Vec<TracePoint>,
}

impl RecordRun {
    fn t(&self) -> u64 {
        self.detector.as_ref().map_or(0, |d| d.t())
    }

    fn best(&self) -> f64 {
        self.records.last().map_or(f64::NEG_INFINITY, |r| r.value)
    }

    /// First time the statistic reaches `b`, if already observed.
    fn first_passage(&self, b: f64) -> Option<u64> {
        let i = self.records.partition_point(|r| r.value < b);
        self.records.get(i).map(|r| r.t)
    }

    /// `min(T(b), cap)` when known, otherwise a lower bound.
    fn bounded_time(&self, b: f64, cap: u64) -> (u64, bool) {
        match self.first_passage(b) {
            Some(t) => (t.min(cap), true),
            None if self.t() >= cap => (cap, true),
            None => (self.t(), false),
        }
    }

    /// Runs until the record reaches `b` or time `until`.
    fn extend(&mut self, b: f64, until: u64) -> Result<()> {
        let mut det = self.detector.take().expect("present between extensions").resume();
        let mut level = self.best();
        while det.t() < until && level < b {
            if let Some(point) = det.push_above(self.source.next(), level)? {
                level = point.value;
                self.records.push(point);
            }
        }
        self.detector = Some(det.suspend());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationSpec {
    pub target_arl: f64,
    /// `b` is ignored.
    pub detector: DetectorConfig,
    /// Change-free experiment.
    pub experiment: Experiment,
    pub replicates: usize,
    pub b_bracket: (f64, f64),
    pub seed: u64,
    /// Relative tolerance on the achieved ARL.
    pub tolerance: f64,
    pub max_steps: usize,
}

impl CalibrationSpec {
    pub fn new(target_arl: f64, detector: DetectorConfig, experiment: Experiment, seed: u64) -> Self {
        Self {
            target_arl,
            detector,
            experiment,
            replicates: 200,
            b_bracket: (0.0, 200.0),
            seed,
            tolerance: 0.1,
            max_steps: 12,
        }
    }

    pub fn cap(&self) -> u64 {
        (CAP_FACTOR * self.target_arl).ceil().max(1.0) as u64
    }

    fn validate(&self) -> Result<()> {
        if !(self.target_arl.is_finite() && self.target_arl > 0.0) {
            return Err(Error::InvalidConfig("target ARL must be positive".into()));
        }
        if self.replicates < 100 {
            return Err(Error::InvalidConfig("calibration needs at least 100 replicates".into()));
        }
        let (lo, hi) = self.b_bracket;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("invalid threshold bracket [{lo}, {hi}]")));
        }
        if self.experiment.scenario.kappa.is_some() {
            return Err(Error::InvalidConfig("calibration needs a scenario without change".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        self.detector.clone().with_threshold(0.0).validate()?;
        self.experiment.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub b: f64,
    /// Monte Carlo ARL at `b` on the calibration replicates.
    pub arl: RunLengthEstimate,
    /// Whether the achieved ARL is within tolerance of the target.
    pub converged: bool,
    /// `(b, estimated ARL or lower bound)` for every bisection step.
    pub history: Vec<(f64, f64)>,
}

struct Calibrator {
    runs: Vec<RecordRun>,
    cap: u64,
    chunk: u64,
}

enum Estimate {
    Exact(f64),
    /// Lower bound already above the early-exit level.
    Above(f64),
}

impl Estimate {
    fn value(&self) -> f64 {
        match *self {
            Estimate::Exact(v) | Estimate::Above(v) => v,
        }
    }
}

impl Calibrator {
    fn new(spec: &CalibrationSpec) -> Result<Self> {
        let cfg = spec.detector.clone().with_threshold(0.0);
        let dim = spec.experiment.dim();
        let runs = (0..spec.replicates as u64)
            .map(|r| {
                Ok(RecordRun {
                    detector: Some(MaxEigDetector::new(cfg.clone(), dim)?.suspend()),
                    source: spec.experiment.source(spec.seed, r)?,
                    records: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cap = spec.cap();
        Ok(Self {
            runs,
            cap,
            chunk: ((spec.target_arl / 8.0).ceil() as u64).max(32),
        })
    }

    /// Mean of `min(T(b), cap)`, stopping early once a lower bound exceeds
    /// `exit_above`.
    fn estimate(&mut self, b: f64, exit_above: f64) -> Result<Estimate> {
        loop {
            let mut sum = 0.0;
            let mut pending = false;
            for run in &self.runs {
                let (t, known) = run.bounded_time(b, self.cap);
                sum += t as f64;
                pending |= !known;
            }
            let mean = sum / self.runs.len() as f64;
            if !pending {
                return Ok(Estimate::Exact(mean));
            }
            if mean > exit_above {
                return Ok(Estimate::Above(mean));
            }
            let (cap, chunk) = (self.cap, self.chunk);
            self.runs.par_iter_mut().try_for_each(|run| {
                if run.bounded_time(b, cap).1 {
                    return Ok(());
                }
                let until = (run.t() + chunk).min(cap);
                run.extend(b, until)
            })?;
        }
    }

    fn report(&mut self, b: f64) -> Result<RunLengthEstimate> {
        self.estimate(b, f64::INFINITY)?;
        let times: Vec<u64> = self.runs.iter().map(|r| r.bounded_time(b, self.cap).0).collect();
        Ok(RunLengthEstimate::from_times(&times, self.cap))
    }
}

/// Bisection on `b` so that the Monte Carlo ARL of the null experiment is
/// within `tolerance` of the target.
pub fn calibrate_threshold(spec: &CalibrationSpec) -> Result<CalibrationResult> {
    spec.validate()?;
    let target = spec.target_arl;
    let mut cal = Calibrator::new(spec)?;
    let (mut lo, mut hi) = spec.b_bracket;
    let arl_lo = cal.estimate(lo, target)?;
    let arl_hi = cal.estimate(hi, target)?;
    let lo_ok = matches!(arl_lo, Estimate::Exact(v) if v < target);
    if !lo_ok || arl_hi.value() <= target {
        return Err(Error::Bracket {
            b_lo: lo,
            b_hi: hi,
            target,
            arl_lo: arl_lo.value(),
            arl_hi: arl_hi.value(),
        });
    }
    let band = spec.tolerance * target;
    let mut history = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..spec.max_steps {
        let mid = 0.5 * (lo + hi);
        let est = cal.estimate(mid, target + band)?;
        history.push((mid, est.value()));
        if let Estimate::Exact(v) = est {
            if best.is_none_or(|(_, bv)| (v - target).abs() < (bv - target).abs()) {
                best = Some((mid, v));
            }
            if (v - target).abs() <= band {
                break;
            }
        }
        if est.value() > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let b = best.map_or(lo, |(b, _)| b);
    let arl = cal.report(b)?;
    Ok(CalibrationResult {
        b,
        converged: (arl.mean - target).abs() <= band,
        arl,
        history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Sketch dimension, or `p` for the unsketched procedure.
    pub m: usize,
    /// Signal scale (`rho` for the sketch sweep, `||Sigma|| / sigma0^2` for
    /// the SNR sweep).
    pub rho: f64,
    pub b: f64,
    pub d: f64,
    /// Achieved ARL, when `b` was calibrated.
    pub arl: Option<RunLengthEstimate>,
    pub edd: RunLengthEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str = "m,rho,b,d,edd,edd_stderr,replicates,censored,arl,arl_stderr";

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            let (arl, arl_se) = r.arl.as_ref().map_or((f64::NAN, f64::NAN), |a| (a.mean, a.stderr));
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.m, r.rho, r.b, r.d, r.edd.mean, r.edd.stderr, r.edd.replicates, r.edd.censored, arl, arl_se
            )
            .expect("string write");
        }
        out
    }

    pub fn row(&self, m: usize, rho: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.m == m && r.rho == rho)
    }
}

/// EDD versus sketch dimension: one nested operator family, a threshold
/// calibrated on the sketched null for every `M`, then the sketched EDD at
/// `kappa = 0` for every signal scale.
#[derive(Debug, Clone)]
pub struct SketchSweepConfig {
    pub p: usize,
    pub s: usize,
    pub sigma0_sq: f64,
    pub rhos: Vec<f64>,
    pub ms: Vec<usize>,
    pub w: usize,
    pub stride: usize,
    /// `None` uses [`DetectorConfig::default_drift`] in dimension `M`.
    pub drift: Option<f64>,
    pub target_arl: f64,
    pub calibration_replicates: usize,
    pub edd_replicates: usize,
    pub b_bracket: (f64, f64),
    pub seed: u64,
}

impl SketchSweepConfig {
    pub fn new(p: usize, s: usize, rhos: Vec<f64>, ms: Vec<usize>, target_arl: f64, seed: u64) -> Self {
        Self {
            p,
            s,
            sigma0_sq: 1.0,
            rhos,
            ms,
            w: 100,
            stride: 4,
            drift: None,
            target_arl,
            calibration_replicates: 200,
            edd_replicates: 500,
            b_bracket: (0.0, 200.0),
            seed,
        }
    }

    pub fn detector(&self, m: usize) -> DetectorConfig {
        DetectorConfig {
            w: self.w,
            d: self.drift.unwrap_or_else(|| DetectorConfig::default_drift(m, self.w)),
            b: 0.0,
            sigma0_sq: self.sigma0_sq,
            stride: self.stride,
        }
    }

    pub fn meta(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        let rhos = self.rhos.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        vec![
            ("p".into(), self.p.to_string()),
            ("s".into(), self.s.to_string()),
            ("sigma0_sq".into(), self.sigma0_sq.to_string()),
            ("rhos".into(), rhos),
            ("ms".into(), list(&self.ms)),
            ("w".into(), self.w.to_string()),
            ("stride".into(), self.stride.to_string()),
            ("drift".into(), self.drift.map_or("default".into(), |d| d.to_string())),
            ("target_arl".into(), self.target_arl.to_string()),
            ("calibration_replicates".into(), self.calibration_replicates.to_string()),
            ("edd_replicates".into(), self.edd_replicates.to_string()),
            ("b_bracket".into(), format!("{};{}", self.b_bracket.0, self.b_bracket.1)),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

pub fn sweep_edd_vs_m(cfg: &SketchSweepConfig) -> Result<SweepResult> {
    if let Some(&m) = cfg.ms.iter().find(|&&m| m == 0 || m > cfg.p) {
        return Err(Error::InvalidConfig(format!("sketch dimension {m} must lie in 1..={}", cfg.p)));
    }
    let ops = make_nested_operators(cfg.p, &cfg.ms, purpose_seed(cfg.seed, Purpose::Operator))?;
    let (null_seed, edd_seed) = (child_seed(cfg.seed, 0), child_seed(cfg.seed, 1));
    let signal_seed = child_seed(cfg.seed, 2);
    let cap = (CAP_FACTOR * cfg.target_arl).ceil() as u64;
    let mut rows = Vec::new();
    for (op, &m) in ops.into_iter().zip(&cfg.ms) {
        let null = Experiment::new(ScenarioConfig::null(cfg.p, cfg.sigma0_sq, 0, 0)).with_sketch(op.clone());
        let mut spec = CalibrationSpec::new(cfg.target_arl, cfg.detector(m), null, null_seed);
        spec.replicates = cfg.calibration_replicates;
        spec.b_bracket = cfg.b_bracket;
        let cal = calibrate_threshold(&spec)?;
        let det = cfg.detector(m).with_threshold(cal.b);
        for &rho in &cfg.rhos {
            let scenario = ScenarioConfig {
                p: cfg.p,
                sigma0_sq: cfg.sigma0_sq,
                s: cfg.s,
                rho,
                kappa: Some(0),
                horizon: 0,
                missing_fraction: 0.0,
                seed: 0,
            };
            let signal = make_signal_covariance(cfg.p, cfg.s, rho, signal_seed)?;
            let exp = Experiment::new(scenario).with_signal(signal).with_sketch(op.clone());
            let edd = estimate_edd(&det, &exp, cfg.edd_replicates, edd_seed, cap)?;
            rows.push(SweepRow {
                m,
                rho,
                b: cal.b,
                d: det.d,
                arl: Some(cal.arl.clone()),
                edd,
            });
        }
    }
    Ok(SweepResult { rows })
}

/// EDD of the unsketched detector at a fixed threshold over a grid of
/// `||Sigma|| / sigma0^2`, one signal direction set rescaled along the grid and
/// shared noise across grid points.
#[derive(Debug, Clone)]
pub struct SnrSweepConfig {
    pub p: usize,
    pub s: usize,
    pub sigma0_sq: f64,
    pub snrs: Vec<f64>,
    pub detector: DetectorConfig,
    pub replicates: usize,
    pub cap: u64,
    pub seed: u64,
}

pub fn sweep_edd_vs_snr(cfg: &SnrSweepConfig) -> Result<SweepResult> {
    let base = make_signal_covariance(cfg.p, cfg.s, 1.0, child_seed(cfg.seed, 2))?;
    let edd_seed = child_seed(cfg.seed, 1);
    let mut rows = Vec::new();
    for &snr in &cfg.snrs {
        let signal = base.with_spectral_norm(snr * cfg.sigma0_sq)?;
        let scenario = ScenarioConfig {
            p: cfg.p,
            sigma0_sq: cfg.sigma0_sq,
            s: cfg.s,
            rho: 1.0,
            kappa: Some(0),
            horizon: 0,
            missing_fraction: 0.0,
            seed: 0,
        };
        let exp = Experiment::new(scenario).with_signal(signal);
        let edd = estimate_edd(&cfg.detector, &exp, cfg.replicates, edd_seed, cfg.cap)?;
        rows.push(SweepRow {
            m: cfg.p,
            rho: snr,
            b: cfg.detector.b,
            d: cfg.detector.d,
            arl: None,
            edd,
        });
    }
    Ok(SweepResult { rows })
}

/// Simulated ARL against the closed-form lower bound for one `(b, eps, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheckRow {
    pub b: f64,
    pub eps: f64,
    pub d: f64,
    /// Size of the certified net backing the bound.
    pub net_size: usize,
    pub bound: f64,
    pub arl: RunLengthEstimate,
}

impl BoundCheckRow {
    /// The simulated ARL respects the bound (vacuous when the bound is < 1).
    pub fn consistent(&self) -> bool {
        self.bound < 1.0 || self.arl.mean >= self.bound
    }
}

pub const BOUND_CHECK_HEADER: &str = "b,eps,d,net_size,bound,arl,arl_stderr,replicates,censored,cap";

pub fn bound_check_csv(rows: &[BoundCheckRow]) -> String {
    let mut out = String::from(BOUND_CHECK_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.b, r.eps, r.d, r.net_size, r.bound, r.arl.mean, r.arl.stderr, r.arl.replicates, r.arl.censored, r.arl.cap
        )
        .expect("string write");
    }
    out
}

/// Null ARL of the detector in dimension `p` against the bound for each
/// `(b, eps, d)`. Runs are capped at `cap`.
pub fn validate_arl_bound(
    p: usize,
    w: usize,
    cases: &[(f64, f64, f64)],
    replicates: usize,
    seed: u64,
    cap: u64,
) -> Result<Vec<BoundCheckRow>> {
    let null = Experiment::new(ScenarioConfig::null(p, 1.0, 0, 0));
    cases
        .iter()
        .enumerate()
        .map(|(i, &(b, eps, d))| {
            let net = build_eps_net(p, eps)?;
            let inputs = BoundInputs {
                b,
                d,
                eps,
                p,
                rho_sq: 0.0,
                sigma0_sq: 1.0,
            };
            let bound = arl_lower_bound(&inputs)?.magnitude;
            let cfg = DetectorConfig {
                w,
                d,
                b,
                sigma0_sq: 1.0,
                stride: 1,
            };
            let arl = estimate_arl(&cfg, &null, replicates, child_seed(seed, i as u64), cap)?;
            Ok(BoundCheckRow {
                b,
                eps,
                d,
                net_size: net.len(),
                bound,
                arl,
            })
        })
        .collect()
}

/// `edd_approx` on a grid, for side-by-side comparison with simulation.
pub fn edd_approx_grid(b: f64, d: f64, p: usize, snrs: &[f64], form: EddForm) -> Result<Vec<f64>> {
    snrs.iter()
        .map(|&x| {
            edd_approx(
                &BoundInputs {
                    b,
                    d,
                    eps: 0.25,
                    p,
                    rho_sq: x,
                    sigma0_sq: 1.0,
                },
                form,
            )
        })
        .collect()
}

/// Subspace-tracking change experiment: a threshold from pooled null traces,
/// then per-replicate statistics around the change.
#[derive(Debug, Clone)]
pub struct TrackerExperimentConfig {
    pub p: usize,
    pub s: usize,
    pub sigma0_sq: f64,
    pub rho: f64,
    pub kappa: u64,
    pub horizon: u64,
    pub missing_fraction: f64,
    pub replicates: usize,
    pub calibration_runs: usize,
    /// Null quantile used as the alarm threshold.
    pub quantile: f64,
    /// Consecutive exceedances required for an alarm.
    pub persistence: usize,
    pub schedule: StepSchedule,
    pub seed: u64,
}

impl TrackerExperimentConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            p: 100,
            s: 10,
            sigma0_sq: 0.01,
            rho: 1.0,
            kappa: 500,
            horizon: 1000,
            missing_fraction: 0.3,
            replicates: 50,
            calibration_runs: 10,
            quantile: 0.999,
            persistence: 5,
            schedule: StepSchedule::default(),
            seed,
        }
    }

    fn scenario(&self, kappa: Option<u64>, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            p: self.p,
            sigma0_sq: self.sigma0_sq,
            s: self.s,
            rho: self.rho,
            kappa,
            horizon: self.horizon,
            missing_fraction: self.missing_fraction,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerReplicateRow {
    pub replicate: usize,
    /// 99th percentile of `||beta||^2` for `t <= kappa`.
    pub pre_q99: f64,
    /// Median of `||beta||^2` over `t` in `[kappa + 100, kappa + 500]`.
    pub post_median: f64,
    pub alarm_time: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerExperimentResult {
    pub threshold: f64,
    pub rows: Vec<TrackerReplicateRow>,
}

pub const TRACKER_EXPERIMENT_HEADER: &str = "replicate,pre_q99,post_median,alarm_time";

impl TrackerExperimentResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACKER_EXPERIMENT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let alarm = r.alarm_time.map_or("none".to_string(), |t| t.to_string());
            writeln!(out, "{},{},{},{}", r.replicate, r.pre_q99, r.post_median, alarm).expect("string write");
        }
        out
    }
}

pub fn tracker_experiment(cfg: &TrackerExperimentConfig) -> Result<TrackerExperimentResult> {
    let (cal_seed, run_seed) = (child_seed(cfg.seed, 0), child_seed(cfg.seed, 1));
    let pooled: Vec<Vec<f64>> = (0..cfg.calibration_runs as u64)
        .into_par_iter()
        .map(|r| {
            let seed = child_seed(cal_seed, r);
            let stream = StreamGenerator::new(cfg.scenario(None, seed))?;
            let rep = run_tracker(stream, cfg.s, cfg.schedule, AlarmRule::Never, seed)?;
            Ok(rep.values(TrackerStatistic::Norm, 1, cfg.horizon))
        })
        .collect::<Result<_>>()?;
    let threshold = empirical_quantile(&pooled.concat(), cfg.quantile)?;
    let rule = AlarmRule::Persistence {
        statistic: TrackerStatistic::Norm,
        threshold,
        run: cfg.persistence,
    };
    let rows = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = child_seed(run_seed, r as u64);
            let stream = StreamGenerator::new(cfg.scenario(Some(cfg.kappa), seed))?;
            let rep = run_tracker(stream, cfg.s, cfg.schedule, rule, seed)?;
            let pre = rep.values(TrackerStatistic::Norm, 1, cfg.kappa);
            let post = rep.values(TrackerStatistic::Norm, cfg.kappa + 100, cfg.kappa + 500);
            Ok(TrackerReplicateRow {
                replicate: r,
                pre_q99: empirical_quantile(&pre, 0.99)?,
                post_median: empirical_quantile(&post, 0.5)?,
                alarm_time: rep.alarm_time,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TrackerExperimentResult { threshold, rows })
}

/// `key=value` run metadata written next to an output file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMeta {
    entries: Vec<(String, String)>,
}

impl RunMeta {
    pub fn new(command: &str) -> Self {
        let mut meta = Self::default();
        meta.push("command", command);
        meta.push("version", version());
        meta
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn extend(&mut self, entries: impl IntoIterator<Item = (String, String)>) {
        self.entries.extend(entries);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Sidecar path: `<output>.meta`.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.as_os_str().to_owned();
        name.push(".meta");
        PathBuf::from(name)
    }

    pub fn write_for(&self, output: &Path) -> Result<PathBuf> {
        let path = Self::path_for(output);
        std::fs::write(&path, self.render())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::make_sketch_operator;

    fn null(p: usize) -> Experiment {
        Experiment::new(ScenarioConfig::null(p, 1.0, 0, 0))
    }

    fn change(p: usize, s: usize, rho: f64) -> Experiment {
        Experiment::new(ScenarioConfig {
            p,
            sigma0_sq: 1.0,
            s,
            rho,
            kappa: Some(0),
            horizon: 0,
            missing_fraction: 0.0,
            seed: 0,
        })
    }

    fn small_cfg(p: usize, b: f64) -> DetectorConfig {
        DetectorConfig::new(p, 20, b, 1.0)
    }

    #[test]
    fn zero_threshold_stops_at_once() {
        let est = estimate_arl(&small_cfg(2, 0.0).with_threshold(0.0), &null(2), 100, 1, 1000).unwrap();
        // d = 0 makes every statistic non-negative
        let cfg = DetectorConfig { d: 0.0, ..small_cfg(2, 0.0) };
        let exact = estimate_arl(&cfg, &null(2), 100, 1, 1000).unwrap();
        assert_eq!(exact.mean, 1.0);
        assert_eq!(exact.censored, 0);
        assert!(est.mean < 5.0);
    }

    #[test]
    fn arl_is_monotone_in_b_on_paired_seeds() {
        let mut last = 0.0;
        for b in [0.0, 1.0, 2.0, 4.0, 6.0] {
            let est = estimate_arl(&small_cfg(3, b), &null(3), 100, 2, 20_000).unwrap();
            assert!(est.mean >= last, "b={b}: {} < {last}", est.mean);
            last = est.mean;
        }
    }

    #[test]
    fn censoring_is_reported() {
        let est = estimate_arl(&small_cfg(2, 1e6), &null(2), 10, 3, 50).unwrap();
        assert_eq!(est.censored, 10);
        assert_eq!(est.mean, 50.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn estimators_check_the_change_time() {
        let cfg = small_cfg(2, 1.0);
        assert!(estimate_arl(&cfg, &change(2, 1, 1.0), 10, 0, 10).is_err());
        assert!(estimate_edd(&cfg, &null(2), 10, 0, 10).is_err());
    }

    #[test]
    fn edd_shrinks_with_signal() {
        let cfg = DetectorConfig::new(10, 20, 10.0, 1.0);
        let weak = estimate_edd(&cfg, &change(10, 1, 0.2), 100, 4, 10_000).unwrap();
        let strong = estimate_edd(&cfg, &change(10, 1, 5.0), 100, 4, 10_000).unwrap();
        assert!(strong.mean < weak.mean);
        assert!(strong.mean <= 3.0, "{}", strong.mean);
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let cfg = small_cfg(4, 3.0);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_arl(&cfg, &null(4), 64, 5, 5000).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn record_passage_matches_direct_runs() {
        let cfg = DetectorConfig::new(3, 15, 0.0, 1.0);
        let exp = null(3);
        let mut run = RecordRun {
            detector: Some(MaxEigDetector::new(cfg.clone(), 3).unwrap().suspend()),
            source: exp.source(9, 0).unwrap(),
            records: Vec::new(),
        };
        for (i, b) in [0.5, 2.0, 1.0, 5.0, 8.0].into_iter().enumerate() {
            run.extend(b, 10_000).unwrap();
            let direct = stopping_time(&cfg.clone().with_threshold(b), &exp, 9, 0, 10_000).unwrap();
            assert_eq!(run.bounded_time(b, 10_000), (direct, true), "case {i}");
        }
        // chunked extension sees the same records
        let mut chunked = RecordRun {
            detector: Some(MaxEigDetector::new(cfg.clone(), 3).unwrap().suspend()),
            source: exp.source(9, 0).unwrap(),
            records: Vec::new(),
        };
        while chunked.t() < run.t() {
            let until = (chunked.t() + 7).min(run.t());
            chunked.extend(f64::INFINITY, until).unwrap();
        }
        let upto: Vec<_> = run.records.iter().filter(|r| r.t <= run.t()).cloned().collect();
        assert_eq!(chunked.records, upto);
    }

    #[test]
    fn calibration_hits_target_and_orders_targets() {
        let det = DetectorConfig::new(3, 20, 0.0, 1.0);
        let mut spec = CalibrationSpec::new(100.0, det.clone(), null(3), 11);
        spec.b_bracket = (0.0, 50.0);
        let small = calibrate_threshold(&spec).unwrap();
        assert!(small.converged, "{small:?}");
        assert!((small.arl.mean - 100.0).abs() <= 10.0);

        // independent replicates at the calibrated b agree with the target
        let check = estimate_arl(&det.clone().with_threshold(small.b), &null(3), 400, 12, 2000).unwrap();
        assert!((check.mean - 100.0).abs() < 25.0, "{check:?}");

        spec.target_arl = 1000.0;
        let large = calibrate_threshold(&spec).unwrap();
        assert!(large.b > small.b);
        assert!((large.arl.mean - 1000.0).abs() <= 100.0);
    }

    #[test]
    fn degenerate_target_is_a_bracket_error() {
        let det = DetectorConfig::new(2, 20, 0.0, 1.0);
        let mut spec = CalibrationSpec::new(1.0, det, null(2), 1);
        spec.b_bracket = (0.0, 20.0);
        match calibrate_threshold(&spec) {
            Err(Error::Bracket { arl_lo, .. }) => assert!(arl_lo >= 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn calibration_spec_validation() {
        let det = DetectorConfig::new(2, 20, 0.0, 1.0);
        let mut spec = CalibrationSpec::new(100.0, det, null(2), 1);
        spec.replicates = 50;
        assert!(matches!(calibrate_threshold(&spec), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn full_sketch_matches_unsketched_distribution() {
        // an orthogonal M = p operator preserves the Gram matrix of samples,
        // so stopping times agree up to rounding
        let cfg = DetectorConfig::new(6, 20, 8.0, 1.0);
        let plain = change(6, 2, 1.0);
        let sketched = plain.clone().with_sketch(make_sketch_operator(6, 6, 3).unwrap());
        let a = estimate_edd(&cfg, &plain, 100, 13, 10_000).unwrap();
        let b = estimate_edd(&cfg, &sketched, 100, 13, 10_000).unwrap();
        assert!((a.mean - b.mean).abs() <= 2.0 * (a.stderr + b.stderr), "{a:?} {b:?}");
    }

    #[test]
    fn small_sketch_sweep_is_reproducible_and_ordered() {
        let mut cfg = SketchSweepConfig::new(20, 2, vec![2.0], vec![1, 4, 16], 200.0, 21);
        cfg.w = 20;
        cfg.stride = 1;
        cfg.calibration_replicates = 100;
        cfg.edd_replicates = 200;
        cfg.b_bracket = (0.0, 100.0);
        let a = sweep_edd_vs_m(&cfg).unwrap();
        let b = sweep_edd_vs_m(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let edd: Vec<f64> = a.rows.iter().map(|r| r.edd.mean).collect();
        assert!(edd[0] > edd[2], "{edd:?}");
        assert!(a.to_csv().starts_with(SWEEP_HEADER));
    }

    #[test]
    fn snr_sweep_decreases() {
        let cfg = SnrSweepConfig {
            p: 10,
            s: 1,
            sigma0_sq: 1.0,
            snrs: vec![0.5, 2.0, 8.0],
            detector: DetectorConfig::new(10, 20, 10.0, 1.0),
            replicates: 200,
            cap: 100_000,
            seed: 5,
        };
        let res = sweep_edd_vs_snr(&cfg).unwrap();
        let edd: Vec<f64> = res.rows.iter().map(|r| r.edd.mean).collect();
        assert!(edd.windows(2).all(|w| w[1] < w[0]), "{edd:?}");
    }

    #[test]
    fn stderr_matches_bootstrap() {
        let mut rng = rng_from_seed(6);
        let values: Vec<f64> = (0..400).map(|_| -rng.random::<f64>().ln() * 50.0).collect();
        let (_, se) = mean_stderr(&values);
        let boot = bootstrap_stderr(&values, 2000, 7);
        assert!((boot / se - 1.0).abs() < 0.2, "{se} {boot}");
    }

    #[test]
    fn bound_check_rows() {
        let rows = validate_arl_bound(2, 20, &[(6.0, 0.25, 4.0)], 50, 1, 100_000).unwrap();
        assert_eq!(rows[0].net_size, crate::cusum::circle_net_size(0.25));
        assert!(rows[0].bound > 0.0);
        let csv = bound_check_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn meta_sidecar() {
        let dir = std::env::temp_dir().join(format!("spikewatch-meta-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let out = dir.join("run.csv");
        let mut meta = RunMeta::new("sweep");
        meta.push("seed", 7);
        let path = meta.write_for(&out).unwrap();
        assert_eq!(path, dir.join("run.csv.meta"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("command=sweep\nversion="));
        assert!(text.ends_with("seed=7\n"));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
