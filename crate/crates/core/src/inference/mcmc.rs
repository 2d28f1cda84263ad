use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainParams, SolverOptions, N_STATES, N_TRANSITIONS};
use crate::error::{Error, Result};
use crate::hazards::{Bounds, HazardFamily};

use super::counts::CountTable;
use super::likelihood::log_likelihood_with;

/// Bounds on the softmax logits that parameterise S⁰ during sampling.
pub const LOGIT_BOUNDS: Bounds = Bounds::new(-10.0, 10.0);

/// Acceptance rate the burn-in adaptation steers towards.
const TARGET_ACCEPTANCE: f64 = 0.44;
/// Proposals per component between adaptation steps.
const ADAPT_BATCH: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Proposal standard deviation as a fraction of each bound's width.
    pub step_fraction: f64,
    /// Per-parameter override of `step_fraction`, in parameter-vector order.
    pub step_fractions: Option<Vec<f64>>,
    /// Tune the proposal scales during burn-in. Samples kept after burn-in
    /// always come from a fixed proposal.
    pub adapt: bool,
    pub seed: u64,
    /// Initial points drawn before giving up on a non-finite likelihood.
    pub max_init_attempts: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 50_000,
            burn_in: 49_000,
            step_fraction: 0.05,
            step_fractions: None,
            adapt: true,
            seed: 0,
            max_init_attempts: 100,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self, n_params: usize) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Domain(format!(
                "burn-in ({}) must be shorter than the chain ({})",
                self.burn_in, self.iterations
            )));
        }
        let fractions = self.step_fractions.as_deref().unwrap_or(std::slice::from_ref(&self.step_fraction));
        if fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(Error::Domain("proposal step fractions must be positive".into()));
        }
        if let Some(f) = &self.step_fractions {
            if f.len() != n_params {
                return Err(Error::Domain(format!(
                    "expected {n_params} step fractions, got {}",
                    f.len()
                )));
            }
        }
        if self.max_init_attempts == 0 {
            return Err(Error::Domain("max_init_attempts must be at least 1".into()));
        }
        Ok(())
    }

    fn step_fraction(&self, i: usize) -> f64 {
        self.step_fractions.as_ref().map_or(self.step_fraction, |f| f[i])
    }
}

/// Output of [`metropolis`].
#[derive(Debug, Clone)]
pub struct McmcRun {
    /// Samples after burn-in, one per iteration.
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    /// Acceptance over the retained iterations only.
    pub retained_acceptance_rate: f64,
    /// Proposal standard deviations in force after burn-in.
    pub steps: Vec<f64>,
    pub best: Vec<f64>,
    pub best_log_target: f64,
}

impl McmcRun {
    /// Component-wise mean of the retained samples.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.samples.len() as f64;
        let mut m = vec![0.0; self.best.len()];
        for s in &self.samples {
            m.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

/// Component-wise random-walk Metropolis.
///
/// Iteration `i` proposes a Gaussian move of coordinate `i mod n`. A move is
/// accepted when `ln u < log_target(proposal) − log_target(current)`; a
/// non-finite target (outside the support) is never accepted.
pub fn metropolis<F, R>(
    mut log_target: F,
    x0: Vec<f64>,
    mut steps: Vec<f64>,
    config: &McmcConfig,
    rng: &mut R,
) -> Result<McmcRun>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng,
{
    let n = x0.len();
    if n == 0 || steps.len() != n {
        return Err(Error::Domain("sampler needs one step size per coordinate".into()));
    }
    if config.burn_in >= config.iterations {
        return Err(Error::Domain("burn-in must be shorter than the chain".into()));
    }
    let mut x = x0;
    let mut lp = log_target(&x);
    if !lp.is_finite() {
        return Err(Error::Initialization("log target is not finite at the initial point".into()));
    }
    let (step_min, step_max): (Vec<f64>, Vec<f64>) = steps.iter().map(|s| (s * 1e-4, s * 20.0)).unzip();
    let mut best = (x.clone(), lp);
    let mut accepted = 0usize;
    let mut retained_accepted = 0usize;
    let mut batch_accepts = vec![0usize; n];
    let mut batch_count = vec![0usize; n];
    let mut batches = vec![0usize; n];
    let mut samples = Vec::with_capacity(config.iterations - config.burn_in);
    let mut proposal = x.clone();

    for it in 0..config.iterations {
        let j = it % n;
        let z: f64 = rng.sample(StandardNormal);
        proposal[j] = x[j] + steps[j] * z;
        let lp_new = log_target(&proposal);
        let log_u = rng.gen::<f64>().ln();
        let accept = lp_new.is_finite() && log_u < lp_new - lp;
        if accept {
            x[j] = proposal[j];
            lp = lp_new;
            accepted += 1;
            if it >= config.burn_in {
                retained_accepted += 1;
            }
            if lp > best.1 {
                best = (x.clone(), lp);
            }
        } else {
            proposal[j] = x[j];
        }

        if config.adapt && it < config.burn_in {
            batch_count[j] += 1;
            batch_accepts[j] += usize::from(accept);
            if batch_count[j] == ADAPT_BATCH {
                batches[j] += 1;
                let rate = batch_accepts[j] as f64 / ADAPT_BATCH as f64;
                let delta = (1.0 / (batches[j] as f64).sqrt()).min(0.25);
                let factor = if rate > TARGET_ACCEPTANCE { delta.exp() } else { (-delta).exp() };
                steps[j] = (steps[j] * factor).clamp(step_min[j], step_max[j]);
                batch_count[j] = 0;
                batch_accepts[j] = 0;
            }
        }
        if it >= config.burn_in {
            samples.push(x.clone());
        }
    }
    Ok(McmcRun {
        samples,
        acceptance_rate: accepted as f64 / config.iterations as f64,
        retained_acceptance_rate: retained_accepted as f64 / (config.iterations - config.burn_in) as f64,
        steps,
        best: best.0,
        best_log_target: best.1,
    })
}

/// Maps logits to the probability simplex.
pub fn softmax(logits: &[f64]) -> [f64; N_STATES] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N_STATES];
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|o| *o /= total);
    out
}

/// Logits whose softmax is `p`, clipped to [`LOGIT_BOUNDS`].
pub fn logits(p: &[f64; N_STATES]) -> [f64; N_STATES] {
    let mut out = [0.0; N_STATES];
    for (o, &v) in out.iter_mut().zip(p) {
        *o = v.max(1e-300).ln();
    }
    // shift so the largest logit sits at the upper bound, keeping ratios
    let shift = LOGIT_BOUNDS.high - out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    out.iter_mut().for_each(|o| *o = LOGIT_BOUNDS.clamp(*o + shift));
    out
}

/// Posterior summary of a sampled chain.
#[derive(Debug, Clone)]
pub struct MhResult {
    pub estimate: ChainParams,
    pub log_likelihood: f64,
    pub acceptance_rate: f64,
    pub retained_acceptance_rate: f64,
    pub init_attempts: usize,
    pub best: ChainParams,
    pub best_log_likelihood: f64,
}

/// Sampling coordinates: every arc's θ, then the six S⁰ logits.
fn sampling_bounds(family: HazardFamily, theta_bounds: &[Bounds]) -> Vec<Bounds> {
    let mut b: Vec<Bounds> = (0..N_TRANSITIONS).flat_map(|_| theta_bounds.iter().copied()).collect();
    b.extend(std::iter::repeat(LOGIT_BOUNDS).take(N_STATES));
    debug_assert_eq!(b.len(), crate::chain::model_dimension(family));
    b
}

fn to_params(family: HazardFamily, z: &[f64]) -> Result<ChainParams> {
    let split = z.len() - N_STATES;
    let mut v = z[..split].to_vec();
    v.extend_from_slice(&softmax(&z[split..]));
    ChainParams::from_vector(family, v.as_slice())
}

/// Metropolis-Hastings over γ with a uniform prior on `theta_bounds`
/// (the same box for every arc) and on the S⁰ logits.
///
/// The estimate is the mean of the retained samples; S⁰ is averaged on the
/// simplex. Without `start` the chain begins at a prior draw, redrawn until
/// the likelihood is finite.
pub fn mh_sample(
    counts: &CountTable,
    family: HazardFamily,
    theta_bounds: &[Bounds],
    config: &McmcConfig,
    start: Option<&ChainParams>,
    options: &SolverOptions,
) -> Result<MhResult> {
    if theta_bounds.len() != family.n_params() {
        return Err(Error::Domain(format!(
            "{family} needs {} parameter bounds, got {}",
            family.n_params(),
            theta_bounds.len()
        )));
    }
    let bounds = sampling_bounds(family, theta_bounds);
    config.validate(bounds.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let log_target = |z: &[f64]| -> f64 {
        if z.iter().zip(&bounds).any(|(v, b)| !b.contains(*v)) {
            return f64::NEG_INFINITY;
        }
        match to_params(family, z).and_then(|p| log_likelihood_with(&p, counts, options)) {
            Ok(ll) if ll.is_finite() => ll,
            _ => f64::NEG_INFINITY,
        }
    };

    let mut attempts = 0;
    let mut x0 = None;
    if let Some(p) = start {
        attempts += 1;
        let mut z = p.to_vector()?;
        let s0 = p.s0;
        z.truncate(z.len() - N_STATES);
        z.extend_from_slice(&logits(&s0));
        if log_target(&z).is_finite() {
            x0 = Some(z);
        }
    }
    while x0.is_none() && attempts < config.max_init_attempts {
        attempts += 1;
        let z: Vec<f64> = bounds.iter().map(|b| rng.gen_range(b.low..=b.high)).collect();
        if log_target(&z).is_finite() {
            x0 = Some(z);
        }
    }
    let x0 = x0.ok_or_else(|| {
        Error::Initialization(format!("no initial point with finite likelihood after {attempts} draws"))
    })?;

    let steps = bounds
        .iter()
        .enumerate()
        .map(|(i, b)| config.step_fraction(i) * b.width())
        .collect();
    let run = metropolis(log_target, x0, steps, config, &mut rng)?;

    let split = bounds.len() - N_STATES;
    let mut mean = run.mean();
    let mut s0 = [0.0; N_STATES];
    for s in &run.samples {
        for (a, b) in s0.iter_mut().zip(softmax(&s[split..])) {
            *a += b;
        }
    }
    let total: f64 = s0.iter().sum();
    s0.iter_mut().for_each(|v| *v /= total);
    mean.truncate(split);
    mean.extend_from_slice(&s0);
    let estimate = ChainParams::from_vector(family, &mean)?;
    let log_likelihood = log_likelihood_with(&estimate, counts, options)?;
    let best = to_params(family, &run.best)?;
    Ok(MhResult {
        estimate,
        log_likelihood,
        acceptance_rate: run.acceptance_rate,
        retained_acceptance_rate: run.retained_acceptance_rate,
        init_attempts: attempts,
        best,
        best_log_likelihood: run.best_log_target,
    })
}
