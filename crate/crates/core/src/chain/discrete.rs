//! Homogeneous discrete-time chain: S^n = S⁰ Pⁿ with P = exp(Q Δt).

use serde::{Deserialize, Serialize};

use super::{check_distribution, ChainParams, StateProbabilityCurve};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat6, Vec6, N};

/// Step length of the discrete-time chain, in years.
pub const HDTMC_STEP_YEARS: f64 = 1.0;

/// Transition matrix over `dt` for a time-invariant generator `q`.
///
/// The exponent carries the positive sign: with negative diagonals in `q`,
/// exp(Q·dt) is the row-stochastic solution of the forward equation.
pub fn hdtmc_step_matrix(q: &Mat6, dt: f64) -> Result<Mat6> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("step length must be positive, got {dt}")));
    }
    for (i, row) in q.iter().enumerate() {
        let scale = row.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("generator row {i} has non-finite entries")));
        }
        if row.iter().enumerate().any(|(j, &v)| j != i && v < 0.0) {
            return Err(Error::Domain(format!("generator row {i} has a negative off-diagonal rate")));
        }
        let sum: f64 = row.iter().sum();
        if sum.abs() > 1e-12 * scale {
            return Err(Error::Domain(format!("generator row {i} sums to {sum}, not 0")));
        }
    }
    let p = linalg::expm(&linalg::scale(q, dt))?;
    for (i, row) in p.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("step matrix row {i} sums to {sum}")));
        }
    }
    Ok(p)
}

/// S⁰ Pⁿ.
pub fn hdtmc_evolve(s0: &Vec6, p: &Mat6, n: usize) -> Vec6 {
    (0..n).fold(*s0, |s, _| linalg::vecmul(&s, p))
}

/// Distributions after 0, 1, …, `n_max` steps.
pub fn hdtmc_curve(s0: &Vec6, p: &Mat6, n_max: usize, dt: f64) -> StateProbabilityCurve {
    let mut probs = Vec::with_capacity(n_max + 1);
    let mut s = *s0;
    probs.push(s);
    for _ in 0..n_max {
        s = linalg::vecmul(&s, p);
        probs.push(s);
    }
    StateProbabilityCurve {
        grid: (0..=n_max).map(|n| n as f64 * dt).collect(),
        probs,
    }
}

/// Discrete-time counterpart of a homogeneous continuous-time chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteChain {
    pub generator: Mat6,
    pub step: Mat6,
    pub s0: Vec6,
    pub dt: f64,
}

impl DiscreteChain {
    /// Derives the yearly step matrix from an Exponential-family chain.
    pub fn from_params(params: &ChainParams) -> Result<Self> {
        if !params.family.is_homogeneous() {
            return Err(Error::ParameterDomain(format!(
                "a discrete-time chain needs time-invariant rates, got {}",
                params.family
            )));
        }
        let generator = super::build_generator(params, 0.0)?;
        Self::new(generator, params.s0, HDTMC_STEP_YEARS)
    }

    pub fn new(generator: Mat6, s0: Vec6, dt: f64) -> Result<Self> {
        check_distribution(&s0, 1e-12)?;
        let step = hdtmc_step_matrix(&generator, dt)?;
        Ok(DiscreteChain {
            generator,
            step,
            s0,
            dt,
        })
    }

    /// State distribution at every grid age; ages must be multiples of `dt`.
    pub fn curve_at(&self, ages: &[f64]) -> Result<StateProbabilityCurve> {
        let mut steps = Vec::with_capacity(ages.len());
        for &a in ages {
            let n = (a / self.dt).round();
            if !(n >= 0.0) || (n * self.dt - a).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "age {a} is not a whole number of {}-year steps",
                    self.dt
                )));
            }
            steps.push(n as usize);
        }
        let n_max = steps.iter().copied().max().unwrap_or(0);
        let full = hdtmc_curve(&self.s0, &self.step, n_max, self.dt);
        Ok(StateProbabilityCurve {
            grid: ages.to_vec(),
            probs: steps.iter().map(|&n| full.probs[n]).collect(),
        })
    }

    pub fn n_params(&self) -> usize {
        // 9 rates + 6 initial probabilities, as for the continuous chain.
        9 + N
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{solve_master_with, SolverOptions, PRISTINE};
    use crate::hazards::HazardFamily;

    fn two_state(rate: f64) -> Mat6 {
        let mut q = linalg::zeros();
        q[0][0] = -rate;
        q[0][1] = rate;
        q
    }

    #[test]
    fn zero_generator_gives_identity() {
        assert_eq!(hdtmc_step_matrix(&linalg::zeros(), 1.0).unwrap(), linalg::identity());
    }

    #[test]
    fn two_state_step_matrix() {
        let p = hdtmc_step_matrix(&two_state(0.1), 1.0).unwrap();
        assert!((p[0][0] - 0.9048374180359595).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_generators() {
        let mut q = two_state(0.1);
        q[0][0] = 0.2;
        assert!(hdtmc_step_matrix(&q, 1.0).is_err());
        let mut q = linalg::zeros();
        q[1][0] = -0.1;
        q[1][1] = 0.1;
        assert!(hdtmc_step_matrix(&q, 1.0).is_err());
        assert!(hdtmc_step_matrix(&two_state(0.1), 0.0).is_err());
    }

    #[test]
    fn evolve_edge_cases() {
        let s0 = [0.3, 0.3, 0.2, 0.1, 0.1, 0.0];
        assert_eq!(hdtmc_evolve(&s0, &linalg::identity(), 17), s0);
        assert_eq!(hdtmc_evolve(&s0, &hdtmc_step_matrix(&two_state(0.4), 1.0).unwrap(), 0), s0);
    }

    #[test]
    fn matches_continuous_chain_at_integer_ages() {
        let rates = [0.05, 0.04, 0.03, 0.02, 0.002, 0.003, 0.004, 0.006, 0.01];
        let params = ChainParams::new(
            HazardFamily::Exponential,
            rates.iter().map(|&r| vec![r]).collect(),
            PRISTINE,
        )
        .unwrap();
        let chain = DiscreteChain::from_params(&params).unwrap();
        let grid: Vec<f64> = (0..=60).map(f64::from).collect();
        let ode = solve_master_with(&params, &grid, &SolverOptions::adaptive()).unwrap();
        for (n, row) in ode.probs.iter().enumerate() {
            let d = hdtmc_evolve(&chain.s0, &chain.step, n);
            for (a, b) in row.iter().zip(&d) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        let curve = chain.curve_at(&[0.0, 10.0, 25.0]).unwrap();
        assert_eq!(curve.probs[1], hdtmc_evolve(&chain.s0, &chain.step, 10));
        assert!(chain.curve_at(&[2.5]).is_err());
    }
}
