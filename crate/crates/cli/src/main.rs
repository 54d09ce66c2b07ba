//! `spikewatch`: simulate streams, run the detectors and reproduce the
//! Monte Carlo experiments from the command line.
//!
//! Every subcommand writes its main output to `--out` and a `key=value`
//! sidecar to `<out>.meta`. Exit codes: 0 success, 2 usage, 3 data, 4 analysis.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spikewatch::analysis::{bounds_table, EddForm};
use spikewatch::detector::{run_detector, DetectorConfig};
use spikewatch::harness::{
    calibrate_threshold, sweep_edd_vs_m, CalibrationSpec, Experiment, RunMeta, SketchSweepConfig,
};
use spikewatch::model::{generate_stream, read_stream, render_stream, ScenarioConfig, StreamSample};
use spikewatch::rng::{purpose_seed, Purpose};
use spikewatch::sketch::{make_sketch_operator, sketch_stream, SketchOperator};
use spikewatch::tracker::{run_tracker, AlarmRule, StepSchedule, TrackerStatistic};
use spikewatch::Error;

#[derive(Parser, Debug)]
#[command(name = "spikewatch", version, about = "Streaming detection of low-rank covariance changes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic stream file.
    Simulate(SimulateArgs),
    /// Run the max-eigenvalue stopping rule over a stream file.
    Detect(DetectArgs),
    /// Project a stream through a random orthonormal sketch.
    Sketch(SketchArgs),
    /// Subspace tracking statistics over a (possibly incomplete) stream.
    Track(TrackArgs),
    /// Calibrate the detection threshold to a target ARL.
    Calibrate(CalibrateArgs),
    /// EDD versus sketch dimension at a calibrated ARL.
    Sweep(SweepArgs),
    /// Closed-form ARL bound and EDD approximation over a grid.
    Bounds(BoundsArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    p: usize,
    /// Signal rank; 0 gives a pure-noise stream.
    #[arg(long, default_value_t = 0)]
    s: usize,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long = "sigma0sq", default_value_t = 1.0)]
    sigma0_sq: f64,
    /// Change time; omit for no change.
    #[arg(long)]
    kappa: Option<u64>,
    #[arg(long)]
    horizon: u64,
    /// Fraction of entries replaced by `nan`.
    #[arg(long, default_value_t = 0.0)]
    missing: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 100)]
    w: usize,
    /// Drift; defaults to `(1 + sqrt(dim / w))^2 + 0.1`.
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    b: f64,
    #[arg(long = "sigma0sq", default_value_t = 1.0)]
    sigma0_sq: f64,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Sketch operator file applied to every sample first.
    #[arg(long)]
    operator: Option<PathBuf>,
    /// Trace CSV (`t,value,k_hat`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SketchArgs {
    #[arg(long)]
    input: PathBuf,
    /// Sketch dimension of a freshly drawn operator.
    #[arg(long, required_unless_present = "operator", conflicts_with = "operator")]
    m: Option<usize>,
    /// Load the operator instead of drawing one.
    #[arg(long)]
    operator: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the operator (M rows of p values).
    #[arg(long)]
    operator_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrackArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = 0.1)]
    eta0: f64,
    #[arg(long, default_value_t = 100.0)]
    t0: f64,
    /// Alarm when `||beta||^2` exceeds this on `--persistence` consecutive samples.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 5)]
    persistence: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace CSV (`t,stat_max,stat_norm,observed_count,skipped`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    p: usize,
    /// Calibrate the detector on `m`-dimensional sketches of the null.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 100)]
    w: usize,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long = "sigma0sq", default_value_t = 1.0)]
    sigma0_sq: f64,
    #[arg(long)]
    target_arl: f64,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 0.0)]
    b_lo: f64,
    #[arg(long, default_value_t = 200.0)]
    b_hi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, default_value_t = 100)]
    p: usize,
    #[arg(long, default_value_t = 3)]
    s: usize,
    #[arg(long = "sigma0sq", default_value_t = 1.0)]
    sigma0_sq: f64,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    rho: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64")]
    m: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    w: usize,
    #[arg(long, default_value_t = 4)]
    stride: usize,
    #[arg(long, default_value_t = 5000.0)]
    target_arl: f64,
    #[arg(long, default_value_t = 200)]
    cal_replicates: usize,
    #[arg(long, default_value_t = 500)]
    replicates: usize,
    #[arg(long, default_value_t = 0.0)]
    b_lo: f64,
    #[arg(long, default_value_t = 400.0)]
    b_hi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    b: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    d: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    eps: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    p: Vec<usize>,
    /// Signal strength `||Sigma||` for the EDD columns.
    #[arg(long = "rho-sq", value_delimiter = ',', default_value = "1")]
    rho_sq: Vec<f64>,
    #[arg(long = "sigma0sq", default_value_t = 1.0)]
    sigma0_sq: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Error plus the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) => 2,
            Error::NoRoot(_) | Error::Bracket { .. } | Error::Degenerate(_) | Error::UnsupportedDimension(_) => 4,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

fn write_output(path: &Path, body: &str, meta: &RunMeta) -> CmdResult {
    std::fs::write(path, body).map_err(Error::from)?;
    meta.write_for(path)?;
    Ok(())
}

fn load_full_stream(path: &Path) -> Result<Vec<StreamSample>, Failure> {
    let stream = read_stream(path)?;
    if let Some(s) = stream.iter().find(|s| !s.is_fully_observed()) {
        return Err(Failure {
            code: 3,
            message: format!("{}: row {} has missing entries", path.display(), s.t),
        });
    }
    Ok(stream)
}

fn simulate(a: &SimulateArgs) -> CmdResult {
    let cfg = ScenarioConfig {
        p: a.p,
        sigma0_sq: a.sigma0_sq,
        s: a.s,
        rho: a.rho,
        kappa: a.kappa,
        horizon: a.horizon,
        missing_fraction: a.missing,
        seed: a.seed,
    };
    let stream = generate_stream(&cfg)?;
    let mut meta = RunMeta::new("simulate");
    meta.push("p", a.p);
    meta.push("s", a.s);
    meta.push("rho", a.rho);
    meta.push("sigma0_sq", a.sigma0_sq);
    meta.push("kappa", opt(&a.kappa));
    meta.push("horizon", a.horizon);
    meta.push("missing_fraction", a.missing);
    meta.push("seed", a.seed);
    write_output(&a.out, &render_stream(&stream, None), &meta)
}

fn load_operator(path: &Path) -> Result<SketchOperator, Failure> {
    Ok(SketchOperator::read(path)?)
}

fn detect(a: &DetectArgs) -> CmdResult {
    let mut stream = load_full_stream(&a.input)?;
    if let Some(path) = &a.operator {
        stream = sketch_stream(&load_operator(path)?, &stream)?;
    }
    let dim = stream.first().map_or(1, StreamSample::dim);
    let cfg = DetectorConfig {
        w: a.w,
        d: a.d.unwrap_or_else(|| DetectorConfig::default_drift(dim, a.w)),
        b: a.b,
        sigma0_sq: a.sigma0_sq,
        stride: a.stride,
    };
    let report = run_detector(stream, &cfg)?;
    let mut body = String::from("t,value,k_hat\n");
    for p in &report.trace {
        body.push_str(&format!("{},{},{}\n", p.t, p.value, p.k_hat));
    }
    let mut meta = RunMeta::new("detect");
    meta.push("input", a.input.display());
    meta.push("operator", opt(&a.operator.as_ref().map(|p| p.display())));
    meta.push("dim", dim);
    meta.push("w", cfg.w);
    meta.push("d", cfg.d);
    meta.push("b", cfg.b);
    meta.push("sigma0_sq", cfg.sigma0_sq);
    meta.push("stride", cfg.stride);
    meta.push("stopped", report.stopped);
    meta.push("stopping_time", opt(&report.stopping_time));
    meta.push("k_hat", opt(&report.k_hat));
    write_output(&a.out, &body, &meta)?;
    println!("stopped={}", report.stopped);
    println!("stopping_time={}", opt(&report.stopping_time));
    println!("k_hat={}", opt(&report.k_hat));
    Ok(())
}

fn sketch(a: &SketchArgs) -> CmdResult {
    let stream = load_full_stream(&a.input)?;
    let p = stream.first().map_or(0, StreamSample::dim);
    let op = match (&a.operator, a.m) {
        (Some(path), _) => load_operator(path)?,
        (None, Some(m)) => make_sketch_operator(p, m, a.seed)?,
        (None, None) => return Err(usage("either --m or --operator is required")),
    };
    let sketched = sketch_stream(&op, &stream)?;
    if let Some(path) = &a.operator_out {
        op.write(path)?;
    }
    let mut meta = RunMeta::new("sketch");
    meta.push("input", a.input.display());
    meta.push("p", op.p());
    meta.push("m", op.m());
    meta.push("operator", opt(&a.operator.as_ref().map(|p| p.display())));
    meta.push("seed", a.seed);
    meta.push("operator_out", opt(&a.operator_out.as_ref().map(|p| p.display())));
    write_output(&a.out, &render_stream(&sketched, None), &meta)
}

fn track(a: &TrackArgs) -> CmdResult {
    let stream = read_stream(&a.input)?;
    let rule = match a.threshold {
        Some(threshold) => AlarmRule::Persistence {
            statistic: TrackerStatistic::Norm,
            threshold,
            run: a.persistence,
        },
        None => AlarmRule::Never,
    };
    let schedule = StepSchedule {
        eta0: a.eta0,
        t0: a.t0,
    };
    let report = run_tracker(stream, a.s, schedule, rule, a.seed)?;
    let mut meta = RunMeta::new("track");
    meta.push("input", a.input.display());
    meta.push("s", a.s);
    meta.push("eta0", a.eta0);
    meta.push("t0", a.t0);
    meta.push("threshold", opt(&a.threshold));
    meta.push("persistence", a.persistence);
    meta.push("seed", a.seed);
    meta.push("alarm_time", opt(&report.alarm_time));
    write_output(&a.out, &report.to_csv(), &meta)?;
    println!("alarm_time={}", opt(&report.alarm_time));
    Ok(())
}

fn calibrate(a: &CalibrateArgs) -> CmdResult {
    let dim = a.m.unwrap_or(a.p);
    let detector = DetectorConfig {
        w: a.w,
        d: a.d.unwrap_or_else(|| DetectorConfig::default_drift(dim, a.w)),
        b: 0.0,
        sigma0_sq: a.sigma0_sq,
        stride: a.stride,
    };
    let mut experiment = Experiment::new(ScenarioConfig::null(a.p, a.sigma0_sq, 0, 0));
    if let Some(m) = a.m {
        // same operator as `sweep --seed` with this seed
        let op = make_sketch_operator(a.p, m, purpose_seed(a.seed, Purpose::Operator))?;
        experiment = experiment.with_sketch(op);
    }
    let mut spec = CalibrationSpec::new(a.target_arl, detector.clone(), experiment, a.seed);
    spec.replicates = a.replicates;
    spec.b_bracket = (a.b_lo, a.b_hi);
    let res = calibrate_threshold(&spec)?;
    let body = format!(
        "b,arl,arl_stderr,replicates,censored,cap,converged\n{},{},{},{},{},{},{}\n",
        res.b, res.arl.mean, res.arl.stderr, res.arl.replicates, res.arl.censored, res.arl.cap, res.converged
    );
    let history = res
        .history
        .iter()
        .map(|(b, arl)| format!("{b}:{arl}"))
        .collect::<Vec<_>>()
        .join(";");
    let mut meta = RunMeta::new("calibrate");
    meta.push("p", a.p);
    meta.push("m", opt(&a.m));
    meta.push("w", a.w);
    meta.push("d", detector.d);
    meta.push("stride", a.stride);
    meta.push("sigma0_sq", a.sigma0_sq);
    meta.push("target_arl", a.target_arl);
    meta.push("replicates", a.replicates);
    meta.push("b_bracket", format!("{},{}", a.b_lo, a.b_hi));
    meta.push("seed", a.seed);
    meta.push("history", history);
    write_output(&a.out, &body, &meta)?;
    println!("b={}", res.b);
    println!("arl={}", res.arl.mean);
    Ok(())
}

fn sweep(a: &SweepArgs) -> CmdResult {
    let mut cfg = SketchSweepConfig::new(a.p, a.s, a.rho.clone(), a.m.clone(), a.target_arl, a.seed);
    cfg.sigma0_sq = a.sigma0_sq;
    cfg.w = a.w;
    cfg.stride = a.stride;
    cfg.calibration_replicates = a.cal_replicates;
    cfg.edd_replicates = a.replicates;
    cfg.b_bracket = (a.b_lo, a.b_hi);
    let res = sweep_edd_vs_m(&cfg)?;
    let mut meta = RunMeta::new("sweep");
    meta.extend(cfg.meta());
    write_output(&a.out, &res.to_csv(), &meta)
}

fn bounds(a: &BoundsArgs) -> CmdResult {
    let table = bounds_table(&a.b, &a.d, &a.eps, &a.p, &a.rho_sq, a.sigma0_sq)?;
    let mut meta = RunMeta::new("bounds");
    meta.push("b", list(&a.b));
    meta.push("d", list(&a.d));
    meta.push("eps", list(&a.eps));
    meta.push("p", list(&a.p));
    meta.push("rho_sq", list(&a.rho_sq));
    meta.push("sigma0_sq", a.sigma0_sq);
    meta.push("edd_form", EddForm::default().name());
    write_output(&a.out, &table, &meta)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Detect(a) => detect(a),
        Command::Sketch(a) => sketch(a),
        Command::Track(a) => track(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Sweep(a) => sweep(a),
        Command::Bounds(a) => bounds(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("spikewatch: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
