use serde::{Deserialize, Serialize};

use crate::chain::{
    solve_master, ChainParams, DiscreteChain, SolverOptions, StateProbabilityCurve, HDTMC_STEP_YEARS, N_STATES,
};
use crate::data::CohortDataset;
use crate::error::{Error, Result};
use crate::hazards::{Bounds, HazardFamily};
use crate::linalg::Mat6;
use crate::metrics::{rmse, EvaluationGrid, MetricSet, MetricsRow};
use crate::turnbull::turnbull_state_probs;

use super::counts::{build_counts, CountTable, FailureRows};
use super::likelihood::{log_likelihood, log_likelihood_on_curve, log_likelihood_with};
use super::mcmc::{mh_sample, McmcConfig};
use super::sqp::{minimize, Constraints, SqpConfig, SqpStatus};

/// How test-set information criteria are computed.
pub const TEST_METRICS_CONVENTION: &str =
    "test AIC/BIC use the test-set log-likelihood and the number of contributing test observations";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub mcmc: McmcConfig,
    pub sqp: SqpConfig,
    /// Prior box for every arc's θ; the family defaults when absent.
    pub bounds: Option<Vec<Bounds>>,
    pub failure_rows: FailureRows,
}

impl FitConfig {
    pub fn theta_bounds(&self, family: HazardFamily) -> Result<Vec<Bounds>> {
        let b = self.bounds.clone().unwrap_or_else(|| family.default_bounds());
        if b.len() != family.n_params() {
            return Err(Error::Domain(format!(
                "{family} needs {} bounds, got {}",
                family.n_params(),
                b.len()
            )));
        }
        if b.iter().any(|b| !(b.low < b.high) || !b.low.is_finite() || !b.high.is_finite()) {
            return Err(Error::Domain(format!("malformed bounds {b:?}")));
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub acceptance_rate: f64,
    pub retained_acceptance_rate: f64,
    pub mh_init_attempts: usize,
    pub sqp_iterations: usize,
    pub sqp_evaluations: usize,
    pub sqp_status: SqpStatus,
    pub sqp_converged: bool,
    /// True when the optimiser ended below the sampler's estimate and the
    /// sampler's estimate was kept.
    pub kept_mh_estimate: bool,
}

/// Yearly discrete-time chain derived from a fitted Exponential generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteReport {
    pub step_matrix: Mat6,
    pub n_params: usize,
    pub log_likelihood_train: f64,
    pub log_likelihood_test: Option<f64>,
    pub train: MetricSet,
    pub test: Option<MetricSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: HazardFamily,
    pub n_params: usize,
    pub gamma_mh: ChainParams,
    pub gamma_star: ChainParams,
    pub log_likelihood_mh: f64,
    pub log_likelihood_train: f64,
    pub log_likelihood_test: Option<f64>,
    pub train: Option<MetricSet>,
    pub test: Option<MetricSet>,
    pub discrete: Option<DiscreteReport>,
    pub diagnostics: FitDiagnostics,
    pub seed: u64,
    pub test_metrics_convention: String,
    pub config: FitConfig,
}

impl FitReport {
    /// Table row named after the family; `None` before scoring.
    pub fn metrics_row(&self) -> Option<MetricsRow> {
        Some(MetricsRow {
            model: self.family.name().to_string(),
            train: self.train?,
            test: self.test,
        })
    }

    pub fn discrete_row(&self) -> Option<MetricsRow> {
        self.discrete.as_ref().map(|d| MetricsRow {
            model: "hdtmc".to_string(),
            train: d.train,
            test: d.test,
        })
    }
}

/// Calibrates one family on `train`: Metropolis-Hastings, then SQP from the
/// sampler's estimate. Metrics are left empty.
pub fn fit(train: &CohortDataset, family: HazardFamily, config: &FitConfig) -> Result<FitReport> {
    let counts = build_counts(&train.age_states(), config.failure_rows)?;
    if counts.is_empty() {
        return Err(Error::Domain(
            "training data has no observations beyond state 1; nothing to calibrate".into(),
        ));
    }
    let theta_bounds = config.theta_bounds(family)?;
    let options = SolverOptions::default();
    let mh = mh_sample(&counts, family, &theta_bounds, &config.mcmc, None, &options)?;

    let (gamma_star, ll_star, sqp) = refine(&counts, family, &theta_bounds, &mh.estimate, &config.sqp, &options)?;
    let kept_mh_estimate = !(ll_star >= mh.log_likelihood);
    let (gamma_star, ll_star) = if kept_mh_estimate {
        (mh.estimate.clone(), mh.log_likelihood)
    } else {
        (gamma_star, ll_star)
    };

    Ok(FitReport {
        family,
        n_params: gamma_star.n_params(),
        gamma_mh: mh.estimate,
        gamma_star,
        log_likelihood_mh: mh.log_likelihood,
        log_likelihood_train: ll_star,
        log_likelihood_test: None,
        train: None,
        test: None,
        discrete: None,
        diagnostics: FitDiagnostics {
            acceptance_rate: mh.acceptance_rate,
            retained_acceptance_rate: mh.retained_acceptance_rate,
            mh_init_attempts: mh.init_attempts,
            sqp_iterations: sqp.iterations,
            sqp_evaluations: sqp.evaluations,
            sqp_status: sqp.status,
            sqp_converged: sqp.converged,
            kept_mh_estimate,
        },
        seed: config.mcmc.seed,
        test_metrics_convention: TEST_METRICS_CONVENTION.to_string(),
        config: config.clone(),
    })
}

struct RefineStats {
    iterations: usize,
    evaluations: usize,
    status: SqpStatus,
    converged: bool,
}

/// Maximises ℓ over the θ box and the S⁰ simplex, starting from `start`.
fn refine(
    counts: &CountTable,
    family: HazardFamily,
    theta_bounds: &[Bounds],
    start: &ChainParams,
    config: &SqpConfig,
    options: &SolverOptions,
) -> Result<(ChainParams, f64, RefineStats)> {
    let x0 = start.to_vector()?;
    let n_theta = x0.len() - N_STATES;
    let (mut lower, mut upper): (Vec<f64>, Vec<f64>) = (0..n_theta)
        .map(|i| {
            let b = theta_bounds[i % theta_bounds.len()];
            (b.low, b.high)
        })
        .unzip();
    lower.extend([0.0; N_STATES]);
    upper.extend([1.0; N_STATES]);
    let constraints = Constraints {
        lower,
        upper,
        simplex: Some(n_theta..n_theta + N_STATES),
    };
    let objective = |x: &[f64]| -> f64 {
        match params_from(family, x).and_then(|p| log_likelihood_with(&p, counts, options)) {
            Ok(ll) => -ll,
            Err(_) => f64::INFINITY,
        }
    };
    let result = minimize(objective, &x0, &constraints, config)?;
    let params = params_from(family, &result.x)?;
    Ok((
        params,
        -result.f,
        RefineStats {
            iterations: result.iterations,
            evaluations: result.evaluations,
            status: result.status,
            converged: result.converged,
        },
    ))
}

/// θ as given; S⁰ rescaled onto the simplex.
fn params_from(family: HazardFamily, x: &[f64]) -> Result<ChainParams> {
    let n_theta = x.len() - N_STATES;
    let mut v = x.to_vec();
    let s0 = &mut v[n_theta..];
    s0.iter_mut().for_each(|p| *p = p.max(0.0));
    let total: f64 = s0.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ParameterDomain("initial distribution has no mass".into()));
    }
    s0.iter_mut().for_each(|p| *p /= total);
    ChainParams::from_vector(family, &v)
}

/// Fit quality of fixed parameters on one data split.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub log_likelihood: f64,
    pub metrics: MetricSet,
    pub grid: EvaluationGrid,
    /// Model occupancy probabilities on the solver grid.
    pub curve: StateProbabilityCurve,
    /// Per-state Turnbull baseline on the evaluation ages.
    pub baseline: StateProbabilityCurve,
}

fn split_counts(data: &CohortDataset, rows: FailureRows) -> Result<(CountTable, EvaluationGrid, StateProbabilityCurve)> {
    let counts = build_counts(&data.age_states(), rows)?;
    if counts.contributing_observations() == 0 {
        return Err(Error::Domain("no observation contributes to the likelihood".into()));
    }
    let grid = EvaluationGrid::from_ages(data.observations.iter().map(|o| o.age))?;
    let baseline = turnbull_state_probs(&data.age_states(), grid.ages())?;
    Ok((counts, grid, baseline))
}

/// ℓ, AIC, BIC and RMSE against the Turnbull baseline of the same data.
pub fn score(params: &ChainParams, data: &CohortDataset, rows: FailureRows) -> Result<Score> {
    let (counts, grid, baseline) = split_counts(data, rows)?;
    let ll = log_likelihood(params, &counts)?;
    let curve = solve_master(params, &grid.solver_grid())?;
    let r = rmse(&curve, &baseline, &grid)?;
    Ok(Score {
        log_likelihood: ll,
        metrics: MetricSet::new(ll, params.n_params(), counts.contributing_observations(), r),
        grid,
        curve,
        baseline,
    })
}

/// As [`score`], with probabilities from yearly steps of the discrete chain.
pub fn score_discrete(chain: &DiscreteChain, data: &CohortDataset, rows: FailureRows) -> Result<Score> {
    let (counts, grid, baseline) = split_counts(data, rows)?;
    let curve = chain.curve_at(&grid.solver_grid())?;
    let ll = if counts.is_empty() {
        0.0
    } else {
        log_likelihood_on_curve(&curve, |_| chain.generator, &counts)?
    };
    let r = rmse(&curve, &baseline, &grid)?;
    Ok(Score {
        log_likelihood: ll,
        metrics: MetricSet::new(ll, chain.n_params(), counts.contributing_observations(), r),
        grid,
        curve,
        baseline,
    })
}

/// [`fit`] on `train`, then metrics on train and, if given, test. For the
/// Exponential family the equivalent yearly discrete chain is scored too.
pub fn fit_and_score(
    train: &CohortDataset,
    test: Option<&CohortDataset>,
    family: HazardFamily,
    config: &FitConfig,
) -> Result<FitReport> {
    let mut report = fit(train, family, config)?;
    let rows = config.failure_rows;
    let s = score(&report.gamma_star, train, rows)?;
    report.log_likelihood_train = s.log_likelihood;
    report.train = Some(s.metrics);
    if let Some(test) = test {
        let s = score(&report.gamma_star, test, rows)?;
        report.log_likelihood_test = Some(s.log_likelihood);
        report.test = Some(s.metrics);
    }
    if family == HazardFamily::Exponential {
        let chain = DiscreteChain::from_params(&report.gamma_star)?;
        debug_assert_eq!(chain.dt, HDTMC_STEP_YEARS);
        let tr = score_discrete(&chain, train, rows)?;
        let te = test.map(|t| score_discrete(&chain, t, rows)).transpose()?;
        report.discrete = Some(DiscreteReport {
            step_matrix: chain.step,
            n_params: chain.n_params(),
            log_likelihood_train: tr.log_likelihood,
            log_likelihood_test: te.as_ref().map(|s| s.log_likelihood),
            train: tr.metrics,
            test: te.map(|s| s.metrics),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_cohort, AgeSampler};

    fn quick_config(seed: u64) -> FitConfig {
        FitConfig {
            mcmc: McmcConfig {
                iterations: 2000,
                burn_in: 1500,
                seed,
                ..McmcConfig::default()
            },
            sqp: SqpConfig {
                max_iterations: 30,
                ..SqpConfig::default()
            },
            ..FitConfig::default()
        }
    }

    #[test]
    fn exponential_fit_is_deterministic_and_complete() {
        let truth = crate::chain::tests::sample_params(HazardFamily::Exponential);
        let data = simulate_cohort(&truth, 600, &AgeSampler::default(), 21).unwrap();
        let (train_ids, test_ids) = crate::metrics::split(&data.pipe_ids(), 0.7, 4).unwrap();
        let (train, test) = (data.subset(&train_ids), data.subset(&test_ids));
        let cfg = quick_config(8);
        let a = fit_and_score(&train, Some(&test), HazardFamily::Exponential, &cfg).unwrap();
        let b = fit_and_score(&train, Some(&test), HazardFamily::Exponential, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_params, 15);
        assert!(a.log_likelihood_train >= a.log_likelihood_mh - 1e-9);
        assert!((a.gamma_star.s0.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let train_m = a.train.unwrap();
        assert_eq!(train_m.aic, crate::metrics::aic(a.log_likelihood_train, 15));
        let d = a.discrete.as_ref().unwrap();
        assert_eq!(d.n_params, 15);
        assert!((d.train.rmse - train_m.rmse).abs() < 1e-9);
        assert!((d.log_likelihood_train - a.log_likelihood_train).abs() < 1e-9 * a.log_likelihood_train.abs());
        let json = serde_json::to_string(&a).unwrap();
        let back: FitReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert_eq!(a.metrics_row().unwrap().model, "exponential");
        assert_eq!(a.discrete_row().unwrap().model, "hdtmc");
    }

    #[test]
    fn two_parameter_family_reports_24() {
        let truth = crate::chain::tests::sample_params(HazardFamily::Gompertz);
        let data = simulate_cohort(&truth, 300, &AgeSampler::default(), 2).unwrap();
        let mut cfg = quick_config(1);
        cfg.mcmc.iterations = 600;
        cfg.mcmc.burn_in = 500;
        cfg.sqp.max_iterations = 5;
        let r = fit(&data, HazardFamily::Gompertz, &cfg).unwrap();
        assert_eq!(r.n_params, 24);
        assert!(r.log_likelihood_train >= r.log_likelihood_mh - 1e-9);
        assert!(r.train.is_none());
    }

    #[test]
    fn pristine_only_data_is_rejected() {
        let data = CohortDataset::new(
            (0..5)
                .map(|i| crate::data::Observation {
                    pipe_id: format!("p{i}"),
                    age: 10.0,
                    state: crate::chain::State::S1,
                })
                .collect(),
            Default::default(),
        )
        .unwrap();
        assert!(fit(&data, HazardFamily::Exponential, &quick_config(0)).is_err());
    }

    #[test]
    fn bounds_must_match_family() {
        let mut cfg = FitConfig::default();
        cfg.bounds = Some(vec![Bounds::new(0.0, 1.0)]);
        assert!(cfg.theta_bounds(HazardFamily::Weibull).is_err());
        assert!(cfg.theta_bounds(HazardFamily::Exponential).is_ok());
    }
}
