//! Time-dependent hazard rates for the five lifetime families.
//!
//! | family       | parameters   | hazard λ(t)                            |
//! |--------------|--------------|----------------------------------------|
//! | Exponential  | α            | α                                      |
//! | Gompertz     | α, β         | αβ·e^{βt}                              |
//! | Weibull      | α (scale), β | (β/α)(t/α)^{β−1}                       |
//! | Log-Logistic | α (scale), β | (β/α)(t/α)^{β−1} / (1 + (t/α)^β)       |
//! | Log-Normal   | μ, σ         | f(t)/S(t) with ln T ~ N(μ, σ²)         |
//!
//! Rates are per year, scales and ages in years. The Weibull, Log-Logistic
//! and Log-Normal hazards are evaluated at `max(t, T_MIN)`, which keeps them
//! finite at age zero; Exponential and Gompertz are regular there.

use std::f64::consts::{LN_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

/// Lower clamp applied to ages before evaluating a hazard that is singular at 0.
pub const T_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HazardFamily {
    Exponential,
    Gompertz,
    Weibull,
    LogLogistic,
    LogNormal,
}

impl HazardFamily {
    pub const ALL: [HazardFamily; 5] = [
        HazardFamily::Exponential,
        HazardFamily::Gompertz,
        HazardFamily::Weibull,
        HazardFamily::LogLogistic,
        HazardFamily::LogNormal,
    ];

    pub fn n_params(self) -> usize {
        match self {
            HazardFamily::Exponential => 1,
            _ => 2,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            HazardFamily::Exponential => &["alpha"],
            HazardFamily::Gompertz | HazardFamily::Weibull | HazardFamily::LogLogistic => {
                &["alpha", "beta"]
            }
            HazardFamily::LogNormal => &["mu", "sigma"],
        }
    }

    /// True when the hazard does not depend on age.
    pub fn is_homogeneous(self) -> bool {
        self == HazardFamily::Exponential
    }

    pub fn name(self) -> &'static str {
        match self {
            HazardFamily::Exponential => "exponential",
            HazardFamily::Gompertz => "gompertz",
            HazardFamily::Weibull => "weibull",
            HazardFamily::LogLogistic => "log-logistic",
            HazardFamily::LogNormal => "log-normal",
        }
    }

    /// Default uniform-prior box for each parameter.
    pub fn default_bounds(self) -> Vec<Bounds> {
        match self {
            HazardFamily::Exponential => vec![Bounds::new(1e-5, 2.0)],
            HazardFamily::Gompertz => vec![Bounds::new(1e-6, 1.0), Bounds::new(1e-4, 0.5)],
            HazardFamily::Weibull | HazardFamily::LogLogistic => {
                vec![Bounds::new(1.0, 500.0), Bounds::new(0.2, 10.0)]
            }
            HazardFamily::LogNormal => vec![Bounds::new(0.0, 7.0), Bounds::new(0.05, 3.0)],
        }
    }

    /// Checks arity, finiteness and the sign constraints of each family.
    pub fn check_theta(self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::ParameterDomain(format!(
                "{} expects {} parameter(s), got {}",
                self,
                self.n_params(),
                theta.len()
            )));
        }
        if let Some(v) = theta.iter().find(|v| !v.is_finite()) {
            return Err(Error::ParameterDomain(format!("{self}: non-finite parameter {v}")));
        }
        let positive: &[usize] = match self {
            HazardFamily::LogNormal => &[1],
            HazardFamily::Exponential => &[0],
            _ => &[0, 1],
        };
        for &i in positive {
            if theta[i] <= 0.0 {
                return Err(Error::ParameterDomain(format!(
                    "{self}: {} must be > 0, got {}",
                    self.param_names()[i],
                    theta[i]
                )));
            }
        }
        Ok(())
    }

    /// Hazard at age `t` without validating `theta`.
    #[inline]
    pub(crate) fn rate_unchecked(self, theta: &[f64], t: f64) -> f64 {
        match self {
            HazardFamily::Exponential => theta[0],
            HazardFamily::Gompertz => theta[0] * theta[1] * (theta[1] * t.max(0.0)).exp(),
            HazardFamily::Weibull => {
                let (a, b) = (theta[0], theta[1]);
                let t = t.max(T_MIN);
                b / a * (t / a).powf(b - 1.0)
            }
            HazardFamily::LogLogistic => {
                let (a, b) = (theta[0], theta[1]);
                let t = t.max(T_MIN);
                let x = t / a;
                let xb = x.powf(b);
                if xb.is_infinite() {
                    // (b/a) x^{b-1} / (1 + x^b) -> b / t
                    return b / t;
                }
                b / a * x.powf(b - 1.0) / (1.0 + xb)
            }
            HazardFamily::LogNormal => {
                let (mu, sigma) = (theta[0], theta[1]);
                let t = t.max(T_MIN);
                let z = (t.ln() - mu) / sigma;
                1.0 / (sigma * t * normal_mills_ratio(z))
            }
        }
    }

    /// ∫_{t0}^{t1} λ(u) du in closed form, without validating `theta`.
    pub(crate) fn cumulative_unchecked(self, theta: &[f64], t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        match self {
            HazardFamily::Exponential => theta[0] * (t1 - t0),
            HazardFamily::Gompertz => {
                let (a, b) = (theta[0], theta[1]);
                a * (b * t0).exp() * (b * (t1 - t0)).exp_m1()
            }
            HazardFamily::Weibull => {
                let (a, b) = (theta[0], theta[1]);
                (t1 / a).powf(b) - (t0 / a).powf(b)
            }
            HazardFamily::LogLogistic => {
                let (a, b) = (theta[0], theta[1]);
                let x0 = (t0 / a).powf(b);
                let x1 = (t1 / a).powf(b);
                if x1.is_infinite() {
                    return b * (t1 / a).ln() - (1.0 + x0).ln();
                }
                ((x1 - x0) / (1.0 + x0)).ln_1p()
            }
            HazardFamily::LogNormal => {
                let (mu, sigma) = (theta[0], theta[1]);
                let log_sf = |t: f64| {
                    if t <= 0.0 {
                        0.0
                    } else {
                        log_normal_sf((t.ln() - mu) / sigma)
                    }
                };
                log_sf(t0) - log_sf(t1)
            }
        }
    }
}

impl fmt::Display for HazardFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HazardFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "exponential" | "exp" => Ok(HazardFamily::Exponential),
            "gompertz" => Ok(HazardFamily::Gompertz),
            "weibull" => Ok(HazardFamily::Weibull),
            "loglogistic" => Ok(HazardFamily::LogLogistic),
            "lognormal" => Ok(HazardFamily::LogNormal),
            _ => Err(Error::Domain(format!("unknown hazard family '{s}'"))),
        }
    }
}

/// Closed interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub low: f64,
    pub high: f64,
}

impl Bounds {
    pub const fn new(low: f64, high: f64) -> Self {
        Bounds { low, high }
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.low, self.high)
    }
}

/// A family tag with its parameters and their admissible box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardSpec {
    pub family: HazardFamily,
    pub theta: Vec<f64>,
    pub bounds: Vec<Bounds>,
}

impl HazardSpec {
    /// Builds a spec using the family's default bounds.
    pub fn new(family: HazardFamily, theta: Vec<f64>) -> Result<Self> {
        Self::with_bounds(family, theta, family.default_bounds())
    }

    pub fn with_bounds(family: HazardFamily, theta: Vec<f64>, bounds: Vec<Bounds>) -> Result<Self> {
        let spec = HazardSpec {
            family,
            theta,
            bounds,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.family.check_theta(&self.theta)?;
        if self.bounds.len() != self.theta.len() {
            return Err(Error::ParameterDomain(format!(
                "{}: {} bounds for {} parameters",
                self.family,
                self.bounds.len(),
                self.theta.len()
            )));
        }
        for ((v, b), name) in self
            .theta
            .iter()
            .zip(&self.bounds)
            .zip(self.family.param_names())
        {
            if !(b.low <= b.high) {
                return Err(Error::ParameterDomain(format!(
                    "{}: malformed bounds [{}, {}] for {name}",
                    self.family, b.low, b.high
                )));
            }
            if !b.contains(*v) {
                return Err(Error::ParameterDomain(format!(
                    "{}: {name} = {v} outside [{}, {}]",
                    self.family, b.low, b.high
                )));
            }
        }
        Ok(())
    }
}

/// λ(t; θ) in events per year.
pub fn hazard_rate(spec: &HazardSpec, t: f64) -> Result<f64> {
    spec.validate()?;
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("hazard age must be >= 0, got {t}")));
    }
    Ok(spec.family.rate_unchecked(&spec.theta, t))
}

/// ∫_{t0}^{t1} λ(u; θ) du.
pub fn cumulative_hazard(spec: &HazardSpec, t0: f64, t1: f64) -> Result<f64> {
    spec.validate()?;
    if !(t0 >= 0.0 && t1 >= t0) {
        return Err(Error::Domain(format!(
            "cumulative hazard needs 0 <= t0 <= t1, got [{t0}, {t1}]"
        )));
    }
    Ok(spec.family.cumulative_unchecked(&spec.theta, t0, t1))
}

/// Ratio Φc(z)/φ(z) of the standard normal tail to its density.
pub(crate) fn normal_mills_ratio(z: f64) -> f64 {
    if z < 5.0 {
        (log_normal_sf(z) - log_std_normal_pdf(z)).exp()
    } else {
        // Laplace continued fraction, evaluated bottom-up.
        let mut tail = z;
        for n in (1..=60).rev() {
            tail = z + n as f64 / tail;
        }
        1.0 / tail
    }
}

fn log_std_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

/// ln Φc(z) for the standard normal distribution, accurate in both tails.
pub(crate) fn log_normal_sf(z: f64) -> f64 {
    if z < 0.0 {
        // Φc(z) = 1 - Φ(-z); Φ(-z) = erfc(-z/√2)/2 is small here.
        (-0.5 * erfc(-z / SQRT_2)).ln_1p()
    } else if z < 30.0 {
        erfc(z / SQRT_2).ln() - LN_2
    } else {
        log_std_normal_pdf(z) + normal_mills_ratio(z).ln()
    }
}
