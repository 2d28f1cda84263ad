//! Cross-sectional synthetic cohorts drawn from a known chain.
//!
//! Each pipe starts in a state drawn from S⁰ and moves forward through the
//! competing arcs by thinning: on windows of at most one year the total exit
//! hazard is dominated by the sum of per-arc suprema, candidate times are
//! drawn from that constant envelope, and each candidate is accepted with
//! probability λ(t)/envelope.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CohortDataset, Observation, Provenance};
use crate::chain::{ChainParams, State, N_STATES};
use crate::error::{Error, Result};
use crate::hazards::{HazardFamily, T_MIN};

const WINDOW_YEARS: f64 = 1.0;

/// Distribution of inspection ages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AgeSampler {
    /// Whole years drawn uniformly from `min..=max`.
    UniformInteger { min: u32, max: u32 },
    /// Continuous uniform on `[min, max]`.
    Uniform { min: f64, max: f64 },
    Fixed { age: f64 },
}

impl Default for AgeSampler {
    fn default() -> Self {
        AgeSampler::UniformInteger { min: 1, max: 70 }
    }
}

impl AgeSampler {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            AgeSampler::UniformInteger { min, max } => min <= max,
            AgeSampler::Uniform { min, max } => min >= 0.0 && min <= max && max.is_finite(),
            AgeSampler::Fixed { age } => age >= 0.0 && age.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid age sampler {self:?}")))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            AgeSampler::UniformInteger { min, max } => f64::from(rng.gen_range(min..=max)),
            AgeSampler::Uniform { min, max } => {
                if min == max {
                    min
                } else {
                    rng.gen_range(min..=max)
                }
            }
            AgeSampler::Fixed { age } => age,
        }
    }
}

/// Arcs leaving `state`, as indices into the chain's arc list.
fn exit_arcs(state: State) -> impl Iterator<Item = (usize, State)> {
    let k = state.index();
    let sequential = (k < 4).then(|| (k, State::from_index(k + 1).unwrap()));
    let failure = (k < 5).then_some((4 + k, State::F));
    sequential.into_iter().chain(failure)
}

/// Upper bound of one arc's hazard on `[a, b]`.
fn arc_supremum(family: HazardFamily, theta: &[f64], a: f64, b: f64) -> f64 {
    let rate = |t: f64| family.rate_unchecked(theta, t);
    match family {
        HazardFamily::Exponential => theta[0],
        HazardFamily::Gompertz => rate(b),
        HazardFamily::Weibull => {
            if theta[1] >= 1.0 {
                rate(b)
            } else {
                rate(a.max(T_MIN))
            }
        }
        HazardFamily::LogLogistic => {
            let (alpha, beta) = (theta[0], theta[1]);
            if beta <= 1.0 {
                rate(a.max(T_MIN))
            } else {
                let mode = alpha * (beta - 1.0).powf(1.0 / beta);
                rate(mode.clamp(a, b))
            }
        }
        HazardFamily::LogNormal => {
            // Unimodal: golden-section search for the maximum on [a, b].
            let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
            let (mut lo, mut hi) = (a.max(T_MIN), b.max(T_MIN));
            let mut x1 = hi - inv_phi * (hi - lo);
            let mut x2 = lo + inv_phi * (hi - lo);
            let (mut f1, mut f2) = (rate(x1), rate(x2));
            for _ in 0..80 {
                if f1 < f2 {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + inv_phi * (hi - lo);
                    f2 = rate(x2);
                } else {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - inv_phi * (hi - lo);
                    f1 = rate(x1);
                }
            }
            let best = f1.max(f2).max(rate(a.max(T_MIN))).max(rate(b.max(T_MIN)));
            best * (1.0 + 1e-9)
        }
    }
}

/// Draws the next transition out of `state` after age `t`, if one happens
/// before `horizon`. Returns the transition age and the destination.
pub fn sample_next_transition<R: Rng>(
    params: &ChainParams,
    state: State,
    t: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<Option<(f64, State)>> {
    let arcs: Vec<(usize, State)> = exit_arcs(state)
        .filter(|(a, _)| params.theta(*a).is_some())
        .collect();
    let mut now = t;
    while now < horizon && !arcs.is_empty() {
        let end = (now + WINDOW_YEARS).min(horizon);
        let envelope: f64 = arcs
            .iter()
            .map(|&(a, _)| arc_supremum(params.family, params.theta(a).unwrap(), now, end))
            .sum();
        if !envelope.is_finite() {
            return Err(Error::Simulation(format!(
                "unbounded hazard out of state {state} on [{now}, {end}]"
            )));
        }
        if envelope <= 0.0 {
            now = end;
            continue;
        }
        let candidate = now + Exp::new(envelope).unwrap().sample(rng);
        if candidate > end {
            now = end;
            continue;
        }
        now = candidate;
        let rates: Vec<f64> = arcs.iter().map(|&(a, _)| params.arc_rate(a, now)).collect();
        let total: f64 = rates.iter().sum();
        if total > envelope * (1.0 + 1e-9) {
            return Err(Error::Simulation(format!(
                "hazard {total} exceeds thinning envelope {envelope} at t = {now}"
            )));
        }
        let u: f64 = rng.gen::<f64>() * envelope;
        if u < total {
            let mut acc = 0.0;
            for (&(_, to), r) in arcs.iter().zip(&rates) {
                acc += r;
                if u < acc {
                    return Ok(Some((now, to)));
                }
            }
            return Ok(Some((now, arcs.last().unwrap().1)));
        }
    }
    Ok(None)
}

fn sample_initial<R: Rng>(s0: &[f64; N_STATES], rng: &mut R) -> State {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in s0.iter().enumerate() {
        acc += p;
        if u < acc {
            return State::from_index(i).unwrap();
        }
    }
    // Round-off: fall back to the last state with mass.
    let last = s0.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    State::from_index(last).unwrap()
}

/// State occupied at `age` by one simulated pipe.
pub fn simulate_pipe<R: Rng>(params: &ChainParams, age: f64, rng: &mut R) -> Result<State> {
    let mut state = sample_initial(&params.s0, rng);
    let mut t = 0.0;
    while !state.is_absorbing() {
        match sample_next_transition(params, state, t, age, rng)? {
            Some((when, to)) => {
                t = when;
                state = to;
            }
            None => break,
        }
    }
    Ok(state)
}

/// `n_pipes` cross-sectional observations, one inspection per pipe.
///
/// Every pipe draws from its own ChaCha stream keyed by the pipe index, so
/// the output does not depend on how the work is scheduled.
pub fn simulate_cohort(
    params: &ChainParams,
    n_pipes: usize,
    ages: &AgeSampler,
    seed: u64,
) -> Result<CohortDataset> {
    params.validate()?;
    ages.validate()?;
    let width = n_pipes.max(1).to_string().len();
    let observations = (0..n_pipes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let age = ages.sample(&mut rng);
            let state = simulate_pipe(params, age, &mut rng)?;
            Ok(Observation {
                pipe_id: format!("sim-{:0width$}", i + 1),
                age,
                state,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CohortDataset::new(
        observations,
        Provenance {
            note: Some(format!("simulated: {n_pipes} pipes, {} chain, seed {seed}", params.family)),
            ..Provenance::default()
        },
    )
}
