use crate::chain::{solve_master_with, survival_outflow, ChainParams, SolverOptions, StateProbabilityCurve};
use crate::error::{Error, Result};
use crate::linalg::Mat6;

use super::counts::CountTable;

/// Densities below this are treated as this, so ℓ stays finite.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// ℓ = Σ_t Σ_k n_{k,t} · ln(−d𝐒_k/dt), with 𝐒_k = Σ_{m≤k} S_m.
pub fn log_likelihood(params: &ChainParams, counts: &CountTable) -> Result<f64> {
    log_likelihood_with(params, counts, &SolverOptions::default())
}

pub fn log_likelihood_with(params: &ChainParams, counts: &CountTable, options: &SolverOptions) -> Result<f64> {
    if counts.is_empty() {
        return Ok(0.0);
    }
    let ages = counts.ages();
    let mut grid: Vec<f64> = Vec::with_capacity(ages.len() + 1);
    if ages[0] != 0 {
        grid.push(0.0);
    }
    grid.extend(ages.iter().map(|&t| f64::from(t)));
    let curve = solve_master_with(params, &grid, options)?;
    log_likelihood_on_curve(&curve, |t| params.generator_unchecked(t), counts)
}

/// ℓ from precomputed occupancy probabilities and a generator.
///
/// `curve` must contain every age of `counts`.
pub fn log_likelihood_on_curve<G: Fn(f64) -> Mat6>(
    curve: &StateProbabilityCurve,
    generator: G,
    counts: &CountTable,
) -> Result<f64> {
    let mut ll = 0.0;
    let mut current: Option<(u32, Mat6, [f64; 6])> = None;
    for (t, k, n) in counts.iter() {
        if current.as_ref().map(|c| c.0) != Some(t) {
            let age = f64::from(t);
            let probs = *curve
                .at(age)
                .ok_or_else(|| Error::Domain(format!("curve has no row for age {age}")))?;
            current = Some((t, generator(age), probs));
        }
        let (_, q, probs) = current.as_ref().unwrap();
        let density = survival_outflow(q, probs, k);
        ll += n as f64 * density.max(DENSITY_FLOOR).ln();
    }
    Ok(ll)
}
