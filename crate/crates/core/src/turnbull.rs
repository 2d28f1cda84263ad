//! Non-parametric survival baseline for interval-censored inspections.
//!
//! Each inspection is binarised against a severity threshold `k_bin`: a pipe
//! seen below the threshold has not yet crossed it (`[y, ∞)`), a pipe seen at
//! or above it crossed it some time before the inspection (`[0, y)`). The
//! Turnbull NPMLE puts probability mass on the innermost intervals of these
//! observations and is computed by self-consistency EM.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chain::{State, StateProbabilityCurve};
use crate::error::{Error, Result};
use crate::format::sig6;

pub const EM_TOLERANCE: f64 = 1e-8;
pub const EM_MAX_ITERATIONS: usize = 1000;

/// An interval of the real line with open or closed ends; `right` may be +∞.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoredInterval {
    pub left: f64,
    pub left_closed: bool,
    pub right: f64,
    pub right_closed: bool,
}

impl CensoredInterval {
    /// `[0, y)`: the threshold was crossed before age `y`.
    pub fn event_before(y: f64) -> Self {
        CensoredInterval {
            left: 0.0,
            left_closed: true,
            right: y,
            right_closed: false,
        }
    }

    /// `[y, ∞)`: the threshold had not been crossed by age `y`.
    pub fn survived_to(y: f64) -> Self {
        CensoredInterval {
            left: y,
            left_closed: true,
            right: f64::INFINITY,
            right_closed: false,
        }
    }

    /// `[y, y]`: exactly observed crossing.
    pub fn exact(y: f64) -> Self {
        CensoredInterval {
            left: y,
            left_closed: true,
            right: y,
            right_closed: true,
        }
    }

    /// `(y, ∞)`: right-censored in the usual survival-analysis sense.
    pub fn right_censored(y: f64) -> Self {
        CensoredInterval {
            left: y,
            left_closed: false,
            right: f64::INFINITY,
            right_closed: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.left.is_finite()
            && !self.right.is_nan()
            && (self.left < self.right || (self.left == self.right && self.left_closed && self.right_closed));
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("empty or malformed interval {self:?}")))
        }
    }

    fn left_key(&self) -> Bound {
        Bound {
            value: self.left,
            rank: if self.left_closed { 1 } else { 3 },
        }
    }

    fn right_key(&self) -> Bound {
        Bound {
            value: self.right,
            rank: if self.right_closed { 2 } else { 0 },
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.left == self.right
    }
}

/// Endpoint position on the line. At a shared value the order is
/// "ends before v" < "starts at v" < "ends at v" < "starts after v".
#[derive(Debug, Clone, Copy, PartialEq)]
struct Bound {
    value: f64,
    rank: u8,
}

impl Eq for Bound {}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bound {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then(self.rank.cmp(&other.rank))
    }
}

/// Binarises inspections against `k_bin`.
pub fn binarize(observations: &[(f64, State)], k_bin: State) -> Result<Vec<CensoredInterval>> {
    if k_bin == State::S1 {
        return Err(Error::Domain("threshold k_bin = 1 is below every observable state".into()));
    }
    observations
        .iter()
        .map(|&(y, k)| {
            if !(y >= 0.0 && y.is_finite()) {
                return Err(Error::Data(format!("invalid inspection age {y}")));
            }
            Ok(if k < k_bin {
                CensoredInterval::survived_to(y)
            } else if y == 0.0 {
                // already past the threshold when new
                CensoredInterval::exact(0.0)
            } else {
                CensoredInterval::event_before(y)
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnbullCurve {
    /// Innermost intervals in increasing order.
    pub intervals: Vec<CensoredInterval>,
    pub masses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Observed-data log-likelihood after each EM iteration.
    pub log_likelihood: Vec<f64>,
}

impl TurnbullCurve {
    /// Ŝ(t): mass lying above `t`.
    ///
    /// Between innermost intervals this is exact. Inside a finite interval
    /// that carries mass the value at the interval's right end is used. Mass
    /// on an unbounded interval never crossed, so it stays above every
    /// finite `t`.
    pub fn survival(&self, t: f64) -> f64 {
        let s: f64 = self
            .intervals
            .iter()
            .zip(&self.masses)
            .filter(|(iv, _)| iv.left > t || (iv.left == t && !iv.left_closed) || iv.right == f64::INFINITY)
            .map(|(_, p)| p)
            .sum();
        s.clamp(0.0, 1.0)
    }
}

/// Innermost (Turnbull) intervals of a set of observations.
fn innermost_intervals(intervals: &[CensoredInterval]) -> Vec<CensoredInterval> {
    // (bound, is_right)
    let mut bounds: Vec<(Bound, bool)> = intervals
        .iter()
        .flat_map(|iv| [(iv.left_key(), false), (iv.right_key(), true)])
        .collect();
    bounds.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    bounds.dedup();
    bounds
        .windows(2)
        .filter(|w| !w[0].1 && w[1].1)
        .map(|w| CensoredInterval {
            left: w[0].0.value,
            left_closed: w[0].0.rank == 1,
            right: w[1].0.value,
            right_closed: w[1].0.rank == 2,
        })
        .collect()
}

fn contains(outer: &CensoredInterval, inner: &CensoredInterval) -> bool {
    inner.left_key() >= outer.left_key() && inner.right_key() <= outer.right_key()
}

/// Turnbull NPMLE by self-consistency EM, starting from uniform masses.
pub fn turnbull_fit(intervals: &[CensoredInterval]) -> Result<TurnbullCurve> {
    if intervals.is_empty() {
        return Err(Error::Domain("Turnbull estimator needs at least one observation".into()));
    }
    for iv in intervals {
        iv.validate()?;
    }
    // Identical observations share one row with a weight.
    let mut groups: BTreeMap<(Bound, Bound), (CensoredInterval, f64)> = BTreeMap::new();
    for iv in intervals {
        groups
            .entry((iv.left_key(), iv.right_key()))
            .or_insert((*iv, 0.0))
            .1 += 1.0;
    }
    let innermost = innermost_intervals(intervals);
    let m = innermost.len();
    let rows: Vec<(Vec<usize>, f64)> = groups
        .values()
        .map(|(iv, w)| {
            let cols = (0..m).filter(|&j| contains(iv, &innermost[j])).collect();
            (cols, *w)
        })
        .collect();

    let log_lik = |p: &[f64]| -> f64 {
        rows.iter()
            .map(|(cols, w)| w * cols.iter().map(|&j| p[j]).sum::<f64>().ln())
            .sum()
    };

    let mut p = vec![1.0 / m as f64; m];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < EM_MAX_ITERATIONS {
        iterations += 1;
        let mut next = vec![0.0; m];
        for (cols, w) in &rows {
            let denom: f64 = cols.iter().map(|&j| p[j]).sum();
            if denom <= 0.0 {
                continue;
            }
            for &j in cols {
                next[j] += w * p[j] / denom;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let delta = next
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        p = next;
        history.push(log_lik(&p));
        if delta < EM_TOLERANCE {
            converged = true;
            break;
        }
    }
    debug_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    Ok(TurnbullCurve {
        intervals: innermost,
        masses: p,
        iterations,
        converged,
        log_likelihood: history,
    })
}

/// Thresholds used for the per-state baseline, in increasing order.
pub const THRESHOLDS: [State; 5] = [State::S2, State::S3, State::S4, State::S5, State::F];

/// One Turnbull curve per threshold `k_bin ∈ {2, 3, 4, 5, F}`.
pub fn turnbull_threshold_curves(observations: &[(f64, State)]) -> Result<Vec<(State, TurnbullCurve)>> {
    if observations.is_empty() {
        return Err(Error::Domain("Turnbull baseline needs at least one observation".into()));
    }
    THRESHOLDS
        .iter()
        .map(|&k| Ok((k, turnbull_fit(&binarize(observations, k)?)?)))
        .collect()
}

/// Per-state probabilities Ŝ_k(t) from the threshold curves.
///
/// With Ŝ⁽ᵏ⁾(t) the estimate of P(state < k at age t): P̂(1) = Ŝ⁽²⁾,
/// P̂(k) = Ŝ⁽ᵏ⁺¹⁾ − Ŝ⁽ᵏ⁾ and P̂(F) = 1 − Ŝ⁽ᶠ⁾. The thresholds are fitted
/// independently, so negative differences are clipped and rows renormalised.
pub fn turnbull_state_probs(observations: &[(f64, State)], ages: &[f64]) -> Result<StateProbabilityCurve> {
    let curves = turnbull_threshold_curves(observations)?;
    Ok(state_probs_from_curves(&curves, ages))
}

pub fn state_probs_from_curves(curves: &[(State, TurnbullCurve)], ages: &[f64]) -> StateProbabilityCurve {
    let probs = ages
        .iter()
        .map(|&t| {
            let s: Vec<f64> = curves.iter().map(|(_, c)| c.survival(t)).collect();
            let mut row = [s[0], s[1] - s[0], s[2] - s[1], s[3] - s[2], s[4] - s[3], 1.0 - s[4]];
            row.iter_mut().for_each(|v| *v = v.max(0.0));
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
            row
        })
        .collect();
    StateProbabilityCurve {
        grid: ages.to_vec(),
        probs,
    }
}

pub const TURNBULL_HEADER: [&str; 3] = ["k_bin", "age", "survival"];

/// Writes `k_bin,age,survival` rows for every threshold curve on `ages`.
pub fn write_threshold_curves<W: Write>(curves: &[(State, TurnbullCurve)], ages: &[f64], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TURNBULL_HEADER)?;
    for (k, curve) in curves {
        for &t in ages {
            w.write_record([k.label().to_string(), sig6(t), sig6(curve.survival(t))])?;
        }
    }
    w.flush()?;
    Ok(())
}
