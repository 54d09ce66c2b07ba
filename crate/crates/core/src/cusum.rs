//! Epsilon-nets on the unit sphere and banks of one-direction chi-square
//! CUSUM procedures.
//!
//! For a unit direction `q` the CUSUM statistic is
//! `S_t = max(0, S_{t-1} + (q^T x_t)^2 / sigma0^2 - d')`, which equals
//! `max(0, max_{k<t} sum_{i=k+1}^t ((q^T x_i)^2 / sigma0^2 - d'))`. Over an
//! epsilon-net with `d' = (1-2 eps) d` and `b' = (1-2 eps) b`, any time the
//! max-eigenvalue statistic reaches `b` some bank member reaches `b'`,
//! because `lambda_1(A) <= (1-2 eps)^{-1} max_q |q^T A q|`.

use std::f64::consts::PI;
use std::path::Path;

use crate::model::{read_rows, write_rows, StreamSample};
use crate::numerics::{dot, largest_eigenvalue, norm, SymMatrix};
use crate::rng::{fill_unit_vector, purpose_seed, rng_from_seed, Purpose};
use crate::{Error, Result};

#[cfg(test)]
const UNIT_TOL: f64 = 1e-12;
const NET_SEED: u64 = 0x6e65_7473;
const PROBES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EpsNet {
    pub eps: f64,
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    /// Covering verified, analytically for `p = 2`, by probes otherwise.
    pub certified: bool,
}

impl EpsNet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(1 + 2/eps)^p`, the covering-number bound.
    pub fn size_bound(&self) -> f64 {
        covering_bound(self.dim, self.eps)
    }

    pub fn within_size_bound(&self) -> bool {
        self.len() as f64 <= self.size_bound()
    }

    /// Distance from `u` to the nearest net point.
    pub fn distance_to(&self, u: &[f64]) -> f64 {
        nearest_sq_distance(&self.points, u).sqrt()
    }

    /// Largest distance from `count` uniform probes to the net.
    pub fn probe_radius(&self, count: usize, seed: u64) -> f64 {
        let mut rng = rng_from_seed(purpose_seed(seed, Purpose::Probe));
        let mut u = vec![0.0; self.dim];
        let mut worst: f64 = 0.0;
        for _ in 0..count {
            fill_unit_vector(&mut rng, &mut u);
            worst = worst.max(nearest_sq_distance(&self.points, &u));
        }
        worst.sqrt()
    }
}

pub fn covering_bound(p: usize, eps: f64) -> f64 {
    (1.0 + 2.0 / eps).powi(p as i32)
}

fn nearest_sq_distance(points: &[Vec<f64>], u: &[f64]) -> f64 {
    // |q - u|^2 = 2 - 2 q.u for unit vectors
    let best = points
        .iter()
        .map(|q| dot(q, u))
        .fold(f64::NEG_INFINITY, f64::max);
    (2.0 - 2.0 * best).max(0.0)
}

/// Number of equally spaced angles needed to cover the circle at chord
/// distance `eps`.
pub fn circle_net_size(eps: f64) -> usize {
    (2.0 * PI / (2.0 * (eps / 2.0).asin())).ceil() as usize
}

/// Builds an `eps`-net of the unit sphere in `R^p` for `p` in 2..=4.
pub fn build_eps_net(p: usize, eps: f64) -> Result<EpsNet> {
    build_eps_net_seeded(p, eps, NET_SEED)
}

/// As [`build_eps_net`]; `seed` drives the candidate sample and probes for
/// `p = 3, 4`.
pub fn build_eps_net_seeded(p: usize, eps: f64, seed: u64) -> Result<EpsNet> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::InvalidConfig(format!("eps must lie in (0, 0.5], got {eps}")));
    }
    match p {
        2 => {
            let n = circle_net_size(eps);
            let points = (0..n)
                .map(|j| {
                    let a = 2.0 * PI * j as f64 / n as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect();
            Ok(EpsNet {
                eps,
                dim: 2,
                points,
                certified: true,
            })
        }
        3 | 4 => Ok(greedy_net(p, eps, seed)),
        _ => Err(Error::UnsupportedDimension(p)),
    }
}

/// Greedy farthest-point selection over a dense random sample, shrinking the
/// build radius until an independent probe set is covered.
fn greedy_net(p: usize, eps: f64, seed: u64) -> EpsNet {
    let mut radius = 0.8 * eps;
    let mut best = None;
    for attempt in 0..4u64 {
        let delta = eps - radius;
        // enough samples that caps of radius delta/2 cover the sphere a few times over
        let cap = (delta / 2.0).powi(p as i32 - 1);
        let samples = ((8.0 / cap) as usize).clamp(2_000, 400_000);
        let mut rng = rng_from_seed(purpose_seed(seed.wrapping_add(attempt), Purpose::Directions));
        let cloud: Vec<Vec<f64>> = (0..samples)
            .map(|_| {
                let mut u = vec![0.0; p];
                fill_unit_vector(&mut rng, &mut u);
                u
            })
            .collect();
        let points = farthest_point_cover(&cloud, radius);
        let mut net = EpsNet {
            eps,
            dim: p,
            points,
            certified: false,
        };
        net.certified = net.probe_radius(PROBES, seed.wrapping_add(attempt)) <= eps;
        if net.certified {
            return net;
        }
        best = Some(net);
        radius *= 0.85;
    }
    best.expect("at least one attempt")
}

fn farthest_point_cover(cloud: &[Vec<f64>], radius: f64) -> Vec<Vec<f64>> {
    // track max dot product to the net; distance <= r iff dot >= 1 - r^2/2
    let target = 1.0 - radius * radius / 2.0;
    let mut best_dot = vec![f64::NEG_INFINITY; cloud.len()];
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut next = 0;
    loop {
        let q = cloud[next].clone();
        let mut worst = (f64::INFINITY, 0);
        for (i, (u, b)) in cloud.iter().zip(best_dot.iter_mut()).enumerate() {
            let c = dot(&q, u);
            if c > *b {
                *b = c;
            }
            if *b < worst.0 {
                worst = (*b, i);
            }
        }
        points.push(q);
        if worst.0 >= target {
            return points;
        }
        next = worst.1;
    }
}

/// `(lambda_1(m), (1-2 eps)^{-1} max_{q in net} |q^T m q|)`.
pub fn eigen_bound_check(m: &SymMatrix, net: &EpsNet) -> Result<(f64, f64)> {
    if m.dim() != net.dim {
        return Err(Error::DimensionMismatch {
            expected: net.dim,
            actual: m.dim(),
        });
    }
    if net.eps >= 0.5 {
        return Err(Error::InvalidConfig("the eigenvalue bound needs eps < 0.5".into()));
    }
    let lhs = largest_eigenvalue(m)?;
    let sup = net
        .points
        .iter()
        .map(|q| m.quad_form(q).abs())
        .fold(0.0, f64::max);
    Ok((lhs, sup / (1.0 - 2.0 * net.eps)))
}

/// `(d', b') = ((1-2 eps) d, (1-2 eps) b)`.
pub fn scaled_drift_threshold(d: f64, b: f64, eps: f64) -> (f64, f64) {
    ((1.0 - 2.0 * eps) * d, (1.0 - 2.0 * eps) * b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CusumState {
    pub q: Vec<f64>,
    pub drift: f64,
    pub threshold: f64,
    pub stat: f64,
    pub t: u64,
    pub alarm_time: Option<u64>,
}

impl CusumState {
    pub fn new(q: Vec<f64>, drift: f64, threshold: f64) -> Result<Self> {
        check_unit(&q)?;
        Ok(Self {
            q,
            drift,
            threshold,
            stat: 0.0,
            t: 0,
            alarm_time: None,
        })
    }

    pub fn increment(&self, x: &[f64], sigma0_sq: f64) -> f64 {
        let z = dot(&self.q, x);
        z * z / sigma0_sq - self.drift
    }

    /// Advances one sample and returns the new statistic.
    pub fn step(&mut self, x: &[f64], sigma0_sq: f64) -> f64 {
        self.stat = (self.stat + self.increment(x, sigma0_sq)).max(0.0);
        self.t += 1;
        if self.alarm_time.is_none() && self.stat >= self.threshold {
            self.alarm_time = Some(self.t);
        }
        self.stat
    }
}

pub fn cusum_step(state: &CusumState, x: &[f64], sigma0_sq: f64) -> CusumState {
    let mut next = state.clone();
    next.step(x, sigma0_sq);
    next
}

fn check_unit(q: &[f64]) -> Result<()> {
    let n = norm(q);
    if q.is_empty() || (n - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!("direction has norm {n}, expected 1")));
    }
    Ok(())
}

/// Per-direction alarm times and the earliest over the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct BankReport {
    pub alarm_times: Vec<Option<u64>>,
    pub first_alarm: Option<u64>,
    pub steps: u64,
}

/// A set of CUSUM procedures sharing one stream.
#[derive(Debug, Clone)]
pub struct CusumBank {
    states: Vec<CusumState>,
    sigma0_sq: f64,
}

impl CusumBank {
    pub fn new(directions: &[Vec<f64>], drift: f64, threshold: f64, sigma0_sq: f64) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::InvalidInput("empty direction bank".into()));
        }
        let dim = directions[0].len();
        let states = directions
            .iter()
            .map(|q| {
                if q.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: q.len(),
                    });
                }
                CusumState::new(q.clone(), drift, threshold)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { states, sigma0_sq })
    }

    pub fn dim(&self) -> usize {
        self.states[0].q.len()
    }

    pub fn states(&self) -> &[CusumState] {
        &self.states
    }

    /// Advances every member; returns the largest statistic in the bank.
    pub fn push(&mut self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let s2 = self.sigma0_sq;
        Ok(self.states.iter_mut().map(|s| s.step(x, s2)).fold(0.0, f64::max))
    }

    pub fn first_alarm(&self) -> Option<u64> {
        self.states.iter().filter_map(|s| s.alarm_time).min()
    }

    pub fn report(&self) -> BankReport {
        BankReport {
            alarm_times: self.states.iter().map(|s| s.alarm_time).collect(),
            first_alarm: self.first_alarm(),
            steps: self.states[0].t,
        }
    }
}

/// Runs every direction over the whole stream.
pub fn run_cusum_bank<I>(
    stream: I,
    directions: &[Vec<f64>],
    drift: f64,
    threshold: f64,
    sigma0_sq: f64,
) -> Result<BankReport>
where
    I: IntoIterator<Item = StreamSample>,
{
    let mut bank = CusumBank::new(directions, drift, threshold, sigma0_sq)?;
    for sample in stream {
        if !sample.is_fully_observed() {
            return Err(Error::Stream {
                t: sample.t,
                message: "CUSUM banks require fully observed samples".into(),
            });
        }
        bank.push(&sample.x).map_err(|e| Error::Stream {
            t: sample.t,
            message: e.to_string(),
        })?;
    }
    Ok(bank.report())
}

/// `count` uniform random unit directions in `R^p`, for banks beyond the
/// dimensions where certified nets are available.
pub fn random_directions(p: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(purpose_seed(seed, Purpose::Directions));
    (0..count)
        .map(|_| {
            let mut u = vec![0.0; p];
            fill_unit_vector(&mut rng, &mut u);
            u
        })
        .collect()
}

/// Reads a direction bank (one unit vector per row).
pub fn read_directions(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let rows = read_rows(path)?;
    for q in &rows {
        check_unit(q)?;
    }
    Ok(rows)
}

pub fn write_directions(directions: &[Vec<f64>], path: impl AsRef<Path>) -> Result<()> {
    write_rows(directions, path, Some("direction bank, one unit vector per row"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{DetectorConfig, MaxEigDetector};
    use crate::rng::{fill_standard_normal, SimRng};
    use rand::Rng;

    fn random_sym(rng: &mut SimRng, p: usize) -> SymMatrix {
        let mut vals = vec![0.0; p * p];
        fill_standard_normal(rng, &mut vals);
        SymMatrix::from_upper(p, |i, j| vals[i * p + j])
    }

    #[test]
    fn circle_grid_sizes() {
        assert_eq!(circle_net_size(0.5), 13);
        let net = build_eps_net(2, 0.5).unwrap();
        assert_eq!(net.len(), 13);
        assert!(net.len() as f64 <= 25.0 && net.within_size_bound());
        for q in &net.points {
            assert!((norm(q) - 1.0).abs() <= UNIT_TOL);
        }
        assert!(net.probe_radius(10_000, 1) <= 0.5);
    }

    #[test]
    fn circle_grid_covering_radius_is_at_most_eps() {
        for eps in [0.05, 0.1, 0.25, 0.4, 0.49] {
            let net = build_eps_net(2, eps).unwrap();
            let n = net.len() as f64;
            // worst point sits halfway between neighbours
            let worst = 2.0 * (PI / (2.0 * n)).sin();
            assert!(worst <= eps + 1e-15, "eps={eps}");
            assert!(net.within_size_bound());
        }
    }

    #[test]
    fn greedy_nets_are_certified_and_small() {
        for (p, eps) in [(3, 0.1), (3, 0.25), (3, 0.4), (4, 0.3), (4, 0.45)] {
            let net = build_eps_net(p, eps).unwrap();
            assert!(net.certified, "p={p} eps={eps}");
            assert!(net.within_size_bound());
            assert!(net.probe_radius(5_000, 99) <= eps);
            for q in &net.points {
                assert!((norm(q) - 1.0).abs() <= UNIT_TOL);
            }
        }
    }

    #[test]
    fn unsupported_inputs() {
        assert!(matches!(build_eps_net(5, 0.3), Err(Error::UnsupportedDimension(5))));
        assert!(build_eps_net(2, 0.6).is_err());
        let wide = build_eps_net(2, 0.5).unwrap();
        assert!(eigen_bound_check(&SymMatrix::identity(2), &wide).is_err());
        assert!(build_eps_net(2, 0.0).is_err());
    }

    #[test]
    fn eigen_bound_hand_cases() {
        let net = build_eps_net(2, 0.25).unwrap();
        let (l, r) = eigen_bound_check(&SymMatrix::identity(2), &net).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        assert!((r - 2.0).abs() < 1e-12);

        let m = SymMatrix::diag(&[5.0, -7.0]);
        let (l, r) = eigen_bound_check(&m, &net).unwrap();
        assert!((l - 5.0).abs() < 1e-12);
        assert!(l <= r && r <= 7.0 / 0.5 + 1e-9);
        assert!(eigen_bound_check(&SymMatrix::identity(3), &net).is_err());
    }

    #[test]
    fn eigen_bound_random_matrices() {
        let mut rng = rng_from_seed(21);
        for (p, eps) in [(2, 0.1), (2, 0.4), (3, 0.25)] {
            let net = build_eps_net(p, eps).unwrap();
            for _ in 0..200 {
                let m = random_sym(&mut rng, p);
                let (l, r) = eigen_bound_check(&m, &net).unwrap();
                assert!(l <= r);
            }
        }
    }

    #[test]
    fn step_boundaries() {
        let mut s = CusumState::new(vec![1.0, 0.0], 2.0, 10.0).unwrap();
        s.stat = 3.0;
        s.step(&[0.0, 5.0], 1.0);
        assert_eq!(s.stat, 1.0);
        s.stat = 0.0;
        s.step(&[2.0f64.sqrt(), 0.0], 1.0);
        assert!(s.stat.abs() < 1e-15);
        let next = cusum_step(&s, &[4.0, 0.0], 1.0);
        assert_eq!(next.stat, 14.0);
        assert_eq!(next.alarm_time, Some(3));
        assert!(CusumState::new(vec![1.0, 1.0], 1.0, 1.0).is_err());
    }

    /// Brute-force `max(0, max_k sum_{i>k} inc_i)` in forward summation.
    fn brute_force(incs: &[f64]) -> f64 {
        (0..incs.len())
            .map(|k| incs[k..].iter().fold(0.0, |a, v| a + v))
            .fold(0.0, f64::max)
    }

    #[test]
    fn recursion_matches_brute_force_on_dyadic_streams() {
        // dyadic data keep every partial sum exact, so equality is exact
        let mut rng = rng_from_seed(22);
        for _ in 0..20 {
            let q: Vec<f64> = (0..4).map(|_| if rng.random::<bool>() { 0.5 } else { -0.5 }).collect();
            let mut s = CusumState::new(q, 1.25, f64::INFINITY).unwrap();
            let mut incs = Vec::new();
            for _ in 0..200 {
                let x: Vec<f64> = (0..4).map(|_| (rng.random_range(-512i32..512) as f64) / 256.0).collect();
                incs.push(s.increment(&x, 1.0));
                let v = s.step(&x, 1.0);
                assert_eq!(v, brute_force(&incs));
            }
        }
    }

    #[test]
    fn recursion_matches_brute_force_on_gaussian_streams() {
        let mut rng = rng_from_seed(23);
        let q = random_directions(3, 1, 5).remove(0);
        let mut s = CusumState::new(q, 1.2, f64::INFINITY).unwrap();
        let mut incs = Vec::new();
        let mut x = vec![0.0; 3];
        for _ in 0..300 {
            fill_standard_normal(&mut rng, &mut x);
            incs.push(s.increment(&x, 1.0));
            let v = s.step(&x, 1.0);
            assert!((v - brute_force(&incs)).abs() <= 1e-10 * v.max(1.0));
        }
    }

    #[test]
    fn bank_of_one_equals_single_state() {
        let q = vec![0.6, 0.8];
        let mut rng = rng_from_seed(24);
        let stream: Vec<StreamSample> = (1..=500)
            .map(|t| {
                let mut x = vec![0.0; 2];
                fill_standard_normal(&mut rng, &mut x);
                StreamSample::new(t, x)
            })
            .collect();
        let mut s = CusumState::new(q.clone(), 1.3, 8.0).unwrap();
        for x in &stream {
            s.step(&x.x, 1.0);
        }
        let r = run_cusum_bank(stream, &[q], 1.3, 8.0, 1.0).unwrap();
        assert_eq!(r.alarm_times, vec![s.alarm_time]);
        assert_eq!(r.first_alarm, s.alarm_time);
    }

    #[test]
    fn null_increments_have_unit_mean() {
        let mut rng = rng_from_seed(25);
        let q = random_directions(5, 1, 6).remove(0);
        let n = 20_000;
        let mut x = vec![0.0; 5];
        let mean = (0..n)
            .map(|_| {
                fill_standard_normal(&mut rng, &mut x);
                dot(&q, &x).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() <= 3.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn net_bank_dominates_max_eig_statistic() {
        // (1-2eps) V_t <= max_q S_t(q) at every step, so V_t >= b forces a bank alarm at b'
        for (p, eps) in [(2, 0.2), (3, 0.3)] {
            let net = build_eps_net(p, eps).unwrap();
            let (d, b) = (3.0, 12.0);
            let (d2, b2) = scaled_drift_threshold(d, b, eps);
            let mut bank = CusumBank::new(&net.points, d2, b2, 1.0).unwrap();
            let cfg = DetectorConfig {
                w: 20,
                d,
                b,
                sigma0_sq: 1.0,
                stride: 1,
            };
            let mut det = MaxEigDetector::new(cfg, p).unwrap();
            let mut rng = rng_from_seed(26 + p as u64);
            let mut x = vec![0.0; p];
            for _ in 0..3000 {
                fill_standard_normal(&mut rng, &mut x);
                x.iter_mut().for_each(|v| *v *= 1.6);
                let v = det.push(&x).unwrap().value;
                let m = bank.push(&x).unwrap();
                assert!(m >= (1.0 - 2.0 * eps) * v - 1e-9 * v.abs().max(1.0));
                if v >= b {
                    assert!(m >= b2 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn aligned_direction_alarms_first() {
        let mut wins = 0;
        let reps = 100;
        for r in 0..reps {
            let mut rng = rng_from_seed(1000 + r);
            let dirs = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
            let mut bank = CusumBank::new(&dirs, 1.5, 10.0, 1.0).unwrap();
            let mut x = vec![0.0; 2];
            for _ in 0..10_000 {
                fill_standard_normal(&mut rng, &mut x);
                // rho^2 / sigma0^2 = 2 along the first axis
                x[0] *= 3.0f64.sqrt();
                bank.push(&x).unwrap();
                if bank.first_alarm().is_some() {
                    break;
                }
            }
            let a = bank.report().alarm_times;
            if a[0].is_some() && (a[1].is_none() || a[0] < a[1]) {
                wins += 1;
            }
        }
        assert!(wins >= 90, "{wins}");
    }

    #[test]
    fn direction_file_round_trip() {
        let dirs = random_directions(6, 4, 9);
        let path = std::env::temp_dir().join(format!("dirs-{}.csv", std::process::id()));
        write_directions(&dirs, &path).unwrap();
        let back = read_directions(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(back, dirs);
    }
}
