//! Closed-form performance approximations for the max-eigenvalue procedure.

use crate::model::SignalCovariance;
use crate::numerics::largest_eigenvalue;
use crate::sketch::{sketched_signal, SketchOperator};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub b: f64,
    pub d: f64,
    pub eps: f64,
    pub p: usize,
    /// `rho^2 = ||Sigma||`, or `||A^T Sigma A||` for sketched runs.
    pub rho_sq: f64,
    pub sigma0_sq: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::InvalidConfig("b must be positive".into()));
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::InvalidConfig("d must be positive".into()));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::InvalidConfig("eps must lie in (0, 0.5)".into()));
        }
        if !(self.rho_sq >= 0.0 && self.rho_sq.is_finite()) {
            return Err(Error::InvalidConfig("rho^2 must be >= 0".into()));
        }
        if !(self.sigma0_sq > 0.0 && self.sigma0_sq.is_finite()) {
            return Err(Error::InvalidConfig("sigma0^2 must be positive".into()));
        }
        Ok(())
    }

    pub fn snr(&self) -> f64 {
        self.rho_sq / self.sigma0_sq
    }
}

/// Root in `(0, 1)` of `log theta + d (1 - theta)(1 - 2 eps) = 0`.
///
/// Solved by bisection on `u = log theta`, where the equation reads
/// `u - c expm1(u) = 0` with `c = d (1 - 2 eps)`; that function is concave
/// with a root at 0 and, when `c > 1`, exactly one root in `(-c, 0)`.
pub fn solve_theta(d: f64, eps: f64) -> Result<f64> {
    let c = d * (1.0 - 2.0 * eps);
    if !(c > 1.0) || !c.is_finite() {
        return Err(Error::NoRoot(c));
    }
    let h = |u: f64| u - c * u.exp_m1();
    let (mut lo, mut hi) = (-c, 0.0_f64);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo.exp())
}

/// The ARL lower bound with each factor kept for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArlBound {
    pub theta: f64,
    /// `b (1/2 - eps)(1 - theta)`.
    pub exponent: f64,
    /// `(1 - theta)/2 + log(theta)/2`; negative for every `theta` in (0, 1).
    pub denominator: f64,
    /// `(1 + 2/eps)^p`.
    pub net_factor: f64,
    /// Value with the denominator as written (negative).
    pub literal: f64,
    /// Absolute value of `literal`, the usable bound.
    pub magnitude: f64,
}

/// `e^{b(1/2-eps)(1-theta)} / [((1-theta)/2 + log(theta)/2) (1+2/eps)^p]`.
pub fn arl_lower_bound(inputs: &BoundInputs) -> Result<ArlBound> {
    inputs.validate()?;
    let theta = solve_theta(inputs.d, inputs.eps)?;
    let exponent = inputs.b * (0.5 - inputs.eps) * (1.0 - theta);
    let denominator = 0.5 * (1.0 - theta) + 0.5 * theta.ln();
    let net_factor = (1.0 + 2.0 / inputs.eps).powi(inputs.p as i32);
    let literal = exponent.exp() / (denominator * net_factor);
    Ok(ArlBound {
        theta,
        exponent,
        denominator,
        net_factor,
        literal,
        magnitude: literal.abs(),
    })
}

/// Which logarithm enters the delay approximation's denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EddForm {
    /// `log(1 + rho^2 / sigma0^2)`: decreasing in the SNR everywhere.
    #[default]
    SnrSquared,
    /// `log(1 + rho / sigma0)`: increases with the SNR below 1.
    Literal,
}

impl EddForm {
    pub fn name(self) -> &'static str {
        match self {
            EddForm::SnrSquared => "snr-squared",
            EddForm::Literal => "literal",
        }
    }
}

impl std::str::FromStr for EddForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr-squared" => Ok(EddForm::SnrSquared),
            "literal" => Ok(EddForm::Literal),
            other => Err(Error::InvalidInput(format!(
                "unknown EDD form '{other}' (expected snr-squared or literal)"
            ))),
        }
    }
}

/// `(b + e^{-b} - 1) / (1 / (2(1 + x)) + log(1 + y) / 2)` with `x = rho^2/sigma0^2`
/// and `y = x` or `sqrt(x)` depending on `form`.
pub fn edd_approx(inputs: &BoundInputs, form: EddForm) -> Result<f64> {
    if !(inputs.b > 0.0 && inputs.b.is_finite()) {
        return Err(Error::InvalidConfig("b must be positive".into()));
    }
    if !(inputs.rho_sq >= 0.0 && inputs.sigma0_sq > 0.0) {
        return Err(Error::InvalidConfig("need rho^2 >= 0 and sigma0^2 > 0".into()));
    }
    let x = inputs.snr();
    let y = match form {
        EddForm::SnrSquared => x,
        EddForm::Literal => x.sqrt(),
    };
    let b = inputs.b;
    Ok((b + (-b).exp() - 1.0) / (0.5 / (1.0 + x) + 0.5 * y.ln_1p()))
}

/// `lambda_1(A^T Sigma A)`, the signal strength seen after sketching.
pub fn sketched_snr(op: &SketchOperator, sigma: &SignalCovariance) -> Result<f64> {
    if sigma.rank() == 0 {
        return Ok(0.0);
    }
    Ok(largest_eigenvalue(&sketched_signal(op, sigma)?)?.max(0.0))
}

/// One row of the `bounds` table.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsRow {
    pub inputs: BoundInputs,
    pub arl: ArlBound,
    pub edd: f64,
    pub edd_literal: f64,
}

pub const BOUNDS_HEADER: &str =
    "b,d,eps,p,rho_sq,sigma0_sq,theta,exponent,denominator,net_factor,arl_literal,arl_magnitude,edd,edd_literal";

impl BoundsRow {
    pub fn evaluate(inputs: BoundInputs) -> Result<Self> {
        Ok(Self {
            inputs,
            arl: arl_lower_bound(&inputs)?,
            edd: edd_approx(&inputs, EddForm::SnrSquared)?,
            edd_literal: edd_approx(&inputs, EddForm::Literal)?,
        })
    }

    pub fn to_csv(&self) -> String {
        let i = &self.inputs;
        let a = &self.arl;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            i.b,
            i.d,
            i.eps,
            i.p,
            i.rho_sq,
            i.sigma0_sq,
            a.theta,
            a.exponent,
            a.denominator,
            a.net_factor,
            a.literal,
            a.magnitude,
            self.edd,
            self.edd_literal
        )
    }
}

/// CSV table over the Cartesian product of the given grids.
pub fn bounds_table(
    bs: &[f64],
    ds: &[f64],
    epss: &[f64],
    ps: &[usize],
    rho_sqs: &[f64],
    sigma0_sq: f64,
) -> Result<String> {
    let mut out = String::from(BOUNDS_HEADER);
    out.push('\n');
    for &b in bs {
        for &d in ds {
            for &eps in epss {
                for &p in ps {
                    for &rho_sq in rho_sqs {
                        let row = BoundsRow::evaluate(BoundInputs {
                            b,
                            d,
                            eps,
                            p,
                            rho_sq,
                            sigma0_sq,
                        })?;
                        out.push_str(&row.to_csv());
                        out.push('\n');
                    }
                }
            }
        }
    }
    Ok(out)
}
