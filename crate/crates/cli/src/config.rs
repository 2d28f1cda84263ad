use std::path::{Path, PathBuf};

use degradation_core::data::{AgeSampler, CohortSpec};
use degradation_core::hazards::HazardFamily;
use degradation_core::inference::FitConfig;
use degradation_core::metrics::DEFAULT_TRAIN_FRACTION;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run needs, as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Cohort CSV (`pipe_id,age,state`), or raw inspections when `cohort` is set.
    pub input: Option<PathBuf>,
    pub cohort: Option<CohortSpec>,
    pub families: Vec<HazardFamily>,
    pub seed: u64,
    pub train_fraction: f64,
    pub fit: FitConfig,
    pub out: PathBuf,
    /// Last age of exported curves, in years.
    pub horizon: f64,
    /// Worker threads for fitting; all cores when absent.
    pub workers: Option<usize>,
    /// Inspection ages for `simulate`.
    pub ages: AgeSampler,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            cohort: None,
            families: HazardFamily::ALL.to_vec(),
            seed: 0,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            fit: FitConfig::default(),
            out: PathBuf::from("out"),
            horizon: 120.0,
            workers: None,
            ages: AgeSampler::default(),
        }
    }
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub seed: Option<u64>,
    pub families: Option<Vec<HazardFamily>>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<Self, CliError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())).with_path(p))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = overrides.input {
            config.input = Some(v);
        }
        if let Some(v) = overrides.seed {
            config.seed = v;
        }
        if let Some(v) = overrides.families {
            config.families = v;
        }
        if let Some(v) = overrides.out {
            config.out = v;
        }
        // one seed drives the split and the sampler
        config.fit.mcmc.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.families.is_empty() {
            return Err(CliError::config("at least one family must be selected"));
        }
        let mut seen = self.families.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.families.len() {
            return Err(CliError::config("families are listed more than once"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::config(format!("train_fraction {} is not in (0, 1)", self.train_fraction)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(CliError::config(format!("horizon {} is not a finite age", self.horizon)));
        }
        if self.workers == Some(0) {
            return Err(CliError::config("workers must be positive"));
        }
        if let Some(c) = &self.cohort {
            c.validate()?;
        }
        Ok(())
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        self.input
            .as_deref()
            .ok_or_else(|| CliError::config("no input file given (config `input` or --input)"))
    }
}

pub fn parse_families(s: &str) -> Result<Vec<HazardFamily>, String> {
    s.split(',')
        .filter(|f| !f.trim().is_empty())
        .map(|f| f.trim().parse::<HazardFamily>().map_err(|e| e.to_string()))
        .collect()
}
