use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use degradation_core::chain::{solve_master, transition_matrix, ChainParams, MATRIX_SERIES_HEADER};
use degradation_core::data::{build_cohort, load_inspections, simulate_cohort, CohortDataset};
use degradation_core::hazards::HazardFamily;
use degradation_core::inference::{fit_and_score, FitReport};
use degradation_core::metrics::{split, write_metrics_table};
use degradation_core::turnbull::{state_probs_from_curves, turnbull_threshold_curves, write_threshold_curves};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn load_dataset(config: &RunConfig) -> Result<CohortDataset, CliError> {
    let path = config.input()?;
    if !path.is_file() {
        return Err(CliError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
    }
    let with_path = |e: degradation_core::Error| CliError::from(e).with_path(path);
    match &config.cohort {
        Some(spec) => {
            let report = load_inspections(path).map_err(with_path)?;
            for r in &report.rejected {
                eprintln!("skipped row: {r:?}");
            }
            let mut data = build_cohort(&report.records, spec).map_err(with_path)?;
            data.provenance.source_digest = Some(report.digest);
            Ok(data)
        }
        None => {
            let file = File::open(path).map_err(|e| CliError::io(path, e))?;
            CohortDataset::read_csv(file).map_err(with_path)
        }
    }
}

fn yearly_ages(last: f64) -> Vec<f64> {
    (0..=last.ceil() as u32).map(f64::from).collect()
}

/// `params_<family>.json`: the fit report plus what is needed to plot it.
#[derive(Debug, Serialize, Deserialize)]
pub struct ParamsFile {
    #[serde(flatten)]
    pub report: FitReport,
    pub last_training_age: f64,
    pub curve_horizon: f64,
}

fn build_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::config(format!("worker pool: {e}")))
}

pub fn cmd_fit(config: &RunConfig) -> Result<Vec<FitReport>, CliError> {
    let data = load_dataset(config)?;
    let (train_ids, test_ids) = split(&data.pipe_ids(), config.train_fraction, config.seed)?;
    let train = data.subset(&train_ids);
    let test = data.subset(&test_ids);
    let test = (!test.is_empty()).then_some(test);
    let last_training_age = train.max_age().unwrap_or(0.0);

    let pool = build_pool(config.workers)?;
    let reports: Vec<FitReport> = pool.install(|| {
        config
            .families
            .par_iter()
            .map(|&family| fit_and_score(&train, test.as_ref(), family, &config.fit))
            .collect::<degradation_core::Result<_>>()
    })?;

    ensure_dir(&config.out)?;
    let mut rows = Vec::new();
    for r in &reports {
        rows.extend(r.metrics_row());
        rows.extend(r.discrete_row());
    }
    let metrics_path = config.out.join("metrics.csv");
    let mut w = create(&metrics_path)?;
    write_metrics_table(&rows, &mut w)?;
    w.flush().map_err(|e| CliError::io(&metrics_path, e))?;

    let curve_ages = yearly_ages(config.horizon);
    for r in &reports {
        let name = r.family.name();
        let params = ParamsFile {
            report: r.clone(),
            last_training_age,
            curve_horizon: config.horizon,
        };
        write_json(&config.out.join(format!("params_{name}.json")), &params)?;
        let curve = solve_master(&r.gamma_star, &curve_ages)?;
        curve.write_csv(create(&config.out.join(format!("curves_{name}.csv")))?)?;
    }

    write_turnbull(&train, &config.out.join("turnbull_train.csv"))?;
    if let Some(test) = &test {
        write_turnbull(test, &config.out.join("turnbull_test.csv"))?;
    }
    write_json(&config.out.join("run_config.json"), config)?;
    Ok(reports)
}

fn write_turnbull(data: &CohortDataset, path: &Path) -> Result<(), CliError> {
    let obs = data.age_states();
    let curves = turnbull_threshold_curves(&obs)?;
    let ages = yearly_ages(data.max_age().unwrap_or(0.0));
    write_threshold_curves(&curves, &ages, create(path)?)?;
    Ok(())
}

/// Threshold curves and the derived state probabilities of the whole input.
pub fn cmd_turnbull(config: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(config)?;
    ensure_dir(&config.out)?;
    let obs = data.age_states();
    let curves = turnbull_threshold_curves(&obs)?;
    let ages = yearly_ages(data.max_age().unwrap_or(0.0));
    write_threshold_curves(&curves, &ages, create(&config.out.join("turnbull.csv"))?)?;
    state_probs_from_curves(&curves, &ages).write_csv(create(&config.out.join("turnbull_states.csv"))?)?;
    Ok(())
}

/// Reads either a bare γ or a `params_<family>.json` file.
pub fn read_params(path: &Path) -> Result<ChainParams, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())).with_path(path))?;
    let gamma = value.get("gamma_star").cloned().unwrap_or(value);
    serde_json::from_value(gamma).map_err(|e| CliError::config(format!("{}: {e}", path.display())).with_path(path))
}

pub fn cmd_transition_matrix(
    params_path: &Path,
    family: Option<HazardFamily>,
    anchors: &[f64],
    tau_max: f64,
    output: &Path,
) -> Result<(), CliError> {
    let params = read_params(params_path)?;
    if let Some(f) = family {
        if f != params.family {
            return Err(CliError::config(format!(
                "{} holds {} parameters, not {f}",
                params_path.display(),
                params.family
            ))
            .with_path(params_path));
        }
    }
    if !(tau_max >= 0.0 && tau_max.is_finite()) {
        return Err(CliError::config(format!("tau_max {tau_max} is not a finite duration")));
    }
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let mut w = csv_writer(output)?;
    w.write_record(MATRIX_SERIES_HEADER).map_err(degradation_core::Error::from)?;
    for &t in anchors {
        let taus: Vec<f64> = (0..=tau_max.floor() as u32).map(|s| t + f64::from(s)).collect();
        transition_matrix(&params, t, &taus)?.write_rows(&mut w)?;
    }
    w.flush().map_err(|e| CliError::io(output, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub seed: u64,
    pub n_pipes: usize,
    pub params: PathBuf,
    pub ages: degradation_core::data::AgeSampler,
}

pub fn cmd_simulate(config: &RunConfig, params_path: &Path, n_pipes: usize, output: &Path) -> Result<(), CliError> {
    let params = read_params(params_path)?;
    let data = simulate_cohort(&params, n_pipes, &config.ages, config.seed)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    data.write_csv(create(output)?)?;
    let meta = SimulationMeta {
        seed: config.seed,
        n_pipes,
        params: params_path.to_path_buf(),
        ages: config.ages,
    };
    write_json(&sidecar(output), &meta)
}

/// `cohort.csv` -> `cohort.meta.json`.
pub fn sidecar(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.meta.json"))
}

pub fn cmd_split(config: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(config)?;
    let (train_ids, test_ids) = split(&data.pipe_ids(), config.train_fraction, config.seed)?;
    ensure_dir(&config.out)?;
    data.subset(&train_ids).write_csv(create(&config.out.join("train.csv"))?)?;
    data.subset(&test_ids).write_csv(create(&config.out.join("test.csv"))?)?;
    Ok(())
}
