//! Six-state progression-with-failure Markov chain.
//!
//! States `1..5` are severity grades and `F` is functional failure. The nine
//! arcs are the sequential steps `k → k+1` for `k = 1..4` plus a jump to `F`
//! from every severity grade. `F` is absorbing. Every arc carries a hazard
//! from one shared family, so the generator `Q(t)` is upper triangular.

mod discrete;
mod integrator;

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::sig6;
use crate::hazards::HazardFamily;
use crate::linalg::{self, Mat6, Vec6, N};

pub use discrete::{hdtmc_curve, hdtmc_evolve, hdtmc_step_matrix, DiscreteChain, HDTMC_STEP_YEARS};
pub use integrator::Tolerances;

pub const N_STATES: usize = N;
pub const N_TRANSITIONS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum State {
    S1,
    S2,
    S3,
    S4,
    S5,
    F,
}

impl State {
    pub const ALL: [State; 6] = [State::S1, State::S2, State::S3, State::S4, State::S5, State::F];

    /// Zero-based position in state vectors.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Severity rank with `F` ranked 6.
    pub fn rank(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_index(i: usize) -> Option<State> {
        State::ALL.get(i).copied()
    }

    pub fn from_rank(rank: u8) -> Option<State> {
        rank.checked_sub(1).and_then(|i| State::from_index(i as usize))
    }

    pub fn label(self) -> &'static str {
        ["1", "2", "3", "4", "5", "F"][self.index()]
    }

    pub fn is_absorbing(self) -> bool {
        self == State::F
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for State {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(State::S1),
            "2" => Ok(State::S2),
            "3" => Ok(State::S3),
            "4" => Ok(State::S4),
            "5" => Ok(State::S5),
            "F" | "f" | "6" => Ok(State::F),
            other => Err(Error::Data(format!("unknown state label '{other}'"))),
        }
    }
}

impl Serialize for State {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for State {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transition {
    pub from: State,
    pub to: State,
}

/// The allowed arcs, in parameter-vector order.
pub const TRANSITIONS: [Transition; N_TRANSITIONS] = [
    Transition { from: State::S1, to: State::S2 },
    Transition { from: State::S2, to: State::S3 },
    Transition { from: State::S3, to: State::S4 },
    Transition { from: State::S4, to: State::S5 },
    Transition { from: State::S1, to: State::F },
    Transition { from: State::S2, to: State::F },
    Transition { from: State::S3, to: State::F },
    Transition { from: State::S4, to: State::F },
    Transition { from: State::S5, to: State::F },
];

pub fn transition_index(from: State, to: State) -> Option<usize> {
    TRANSITIONS.iter().position(|tr| tr.from == from && tr.to == to)
}

/// Hazard parameters of one arc; `None` switches the arc off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcParams {
    pub from: State,
    pub to: State,
    pub theta: Option<Vec<f64>>,
}

/// γ: per-arc hazard parameters plus the initial distribution S⁰.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChainParams")]
pub struct ChainParams {
    pub family: HazardFamily,
    pub arcs: Vec<ArcParams>,
    pub s0: Vec6,
}

#[derive(Deserialize)]
struct RawChainParams {
    family: HazardFamily,
    arcs: Vec<ArcParams>,
    s0: Vec6,
}

impl TryFrom<RawChainParams> for ChainParams {
    type Error = Error;

    fn try_from(raw: RawChainParams) -> Result<Self> {
        let p = ChainParams {
            family: raw.family,
            arcs: raw.arcs,
            s0: raw.s0,
        };
        p.validate()?;
        Ok(p)
    }
}

/// All mass in the pristine state.
pub const PRISTINE: Vec6 = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];

impl ChainParams {
    /// One θ per arc in [`TRANSITIONS`] order.
    pub fn new(family: HazardFamily, thetas: Vec<Vec<f64>>, s0: Vec6) -> Result<Self> {
        if thetas.len() != N_TRANSITIONS {
            return Err(Error::ParameterDomain(format!(
                "expected {N_TRANSITIONS} arc parameter sets, got {}",
                thetas.len()
            )));
        }
        Self::from_optional(family, thetas.into_iter().map(Some).collect(), s0)
    }

    pub fn from_optional(
        family: HazardFamily,
        thetas: Vec<Option<Vec<f64>>>,
        s0: Vec6,
    ) -> Result<Self> {
        let arcs = TRANSITIONS
            .iter()
            .zip(thetas)
            .map(|(tr, theta)| ArcParams {
                from: tr.from,
                to: tr.to,
                theta,
            })
            .collect();
        let p = ChainParams { family, arcs, s0 };
        p.validate()?;
        Ok(p)
    }

    /// A chain with only the given arcs active.
    pub fn with_arcs(family: HazardFamily, active: &[(Transition, Vec<f64>)], s0: Vec6) -> Result<Self> {
        let mut thetas = vec![None; N_TRANSITIONS];
        for (tr, theta) in active {
            let i = transition_index(tr.from, tr.to).ok_or_else(|| {
                Error::ParameterDomain(format!("{} -> {} is not an arc of the chain", tr.from, tr.to))
            })?;
            thetas[i] = Some(theta.clone());
        }
        Self::from_optional(family, thetas, s0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arcs.len() != N_TRANSITIONS {
            return Err(Error::ParameterDomain(format!(
                "expected {N_TRANSITIONS} arcs, got {}",
                self.arcs.len()
            )));
        }
        for (arc, tr) in self.arcs.iter().zip(TRANSITIONS.iter()) {
            if arc.from != tr.from || arc.to != tr.to {
                return Err(Error::ParameterDomain(format!(
                    "arc {} -> {} out of order, expected {} -> {}",
                    arc.from, arc.to, tr.from, tr.to
                )));
            }
            if let Some(theta) = &arc.theta {
                self.family.check_theta(theta)?;
            }
        }
        check_distribution(&self.s0, 1e-12)
    }

    /// |γ| = 9 · (parameters per family) + 6.
    pub fn n_params(&self) -> usize {
        model_dimension(self.family)
    }

    pub fn theta(&self, arc: usize) -> Option<&[f64]> {
        self.arcs[arc].theta.as_deref()
    }

    /// Hazard of arc `arc` at age `t`; zero for switched-off arcs.
    #[inline]
    pub fn arc_rate(&self, arc: usize, t: f64) -> f64 {
        match &self.arcs[arc].theta {
            Some(theta) => self.family.rate_unchecked(theta, t),
            None => 0.0,
        }
    }

    /// Flattened θ of every arc followed by S⁰. Fails if any arc is off.
    pub fn to_vector(&self) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(self.n_params());
        for arc in &self.arcs {
            let theta = arc.theta.as_ref().ok_or_else(|| {
                Error::ParameterDomain(format!("arc {} -> {} is switched off", arc.from, arc.to))
            })?;
            v.extend_from_slice(theta);
        }
        v.extend_from_slice(&self.s0);
        Ok(v)
    }

    pub fn from_vector(family: HazardFamily, v: &[f64]) -> Result<Self> {
        let p = family.n_params();
        if v.len() != model_dimension(family) {
            return Err(Error::ParameterDomain(format!(
                "{family} chain needs {} values, got {}",
                model_dimension(family),
                v.len()
            )));
        }
        let thetas = v[..N_TRANSITIONS * p].chunks(p).map(|c| c.to_vec()).collect();
        let mut s0 = [0.0; N];
        s0.copy_from_slice(&v[N_TRANSITIONS * p..]);
        Self::new(family, thetas, s0)
    }

    pub(crate) fn generator_unchecked(&self, t: f64) -> Mat6 {
        let mut q = linalg::zeros();
        for (a, tr) in TRANSITIONS.iter().enumerate() {
            let rate = self.arc_rate(a, t);
            let (i, j) = (tr.from.index(), tr.to.index());
            q[i][j] = rate;
            q[i][i] -= rate;
        }
        q
    }
}

pub fn model_dimension(family: HazardFamily) -> usize {
    N_TRANSITIONS * family.n_params() + N_STATES
}

pub(crate) fn check_distribution(s: &Vec6, tol: f64) -> Result<()> {
    if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::ParameterDomain(format!("initial distribution {s:?} has entries outside [0, 1]")));
    }
    let total: f64 = s.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::ParameterDomain(format!("initial distribution sums to {total}, not 1")));
    }
    Ok(())
}

/// Q(t): off-diagonals are arc hazards, rows sum to zero, row F is zero.
pub fn build_generator(params: &ChainParams, t: f64) -> Result<Mat6> {
    params.validate()?;
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("generator age must be >= 0, got {t}")));
    }
    Ok(params.generator_unchecked(t))
}

/// Rate of probability flow out of the states `1..=k` at one instant:
/// `−d/dt Σ_{m ≤ k} S_m`. For the progression-only topology this equals
/// `λ_{k,k+1} S_k + Σ_{m ≤ k} λ_{mF} S_m`.
pub fn survival_outflow(q: &Mat6, probs: &Vec6, k: State) -> f64 {
    let k = k.index();
    let mut flow = 0.0;
    for m in 0..=k {
        for j in k + 1..N {
            flow += probs[m] * q[m][j];
        }
    }
    flow
}

/// How state probabilities are propagated between output ages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Propagation {
    /// Exact matrix-exponential propagation for time-invariant generators,
    /// adaptive integration otherwise.
    Auto,
    /// Always use the adaptive integrator.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tolerances: Tolerances,
    pub propagation: Propagation,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerances: Tolerances::default(),
            propagation: Propagation::Auto,
        }
    }
}

impl SolverOptions {
    pub fn adaptive() -> Self {
        SolverOptions {
            propagation: Propagation::Adaptive,
            ..Default::default()
        }
    }
}

/// Largest round-off deviation that is silently repaired.
const REPAIR_LIMIT: f64 = 1e-8;

/// Clips round-off negatives and renormalises; errors on larger deviations.
fn repair_row(row: &mut Vec6, t: f64) -> Result<()> {
    let total: f64 = row.iter().sum();
    let negative = row.iter().fold(0.0f64, |m, &v| m.max(-v));
    let deviation = negative.max((total - 1.0).abs());
    if !deviation.is_finite() || deviation > REPAIR_LIMIT {
        return Err(Error::Integration {
            t,
            reason: format!("probability row deviates from the simplex by {deviation:e}"),
        });
    }
    if negative > 0.0 || total != 1.0 {
        row.iter_mut().for_each(|v| *v = v.max(0.0));
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(())
}

fn check_grid(grid: &[f64], start: f64, what: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Domain(format!("{what} is empty")));
    }
    if grid[0] != start {
        return Err(Error::Domain(format!("{what} must start at {start}, starts at {}", grid[0])));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{what} must be strictly increasing and finite")));
    }
    Ok(())
}

/// Propagates a block of rows along `grid` (first entry is the start time).
fn propagate(
    params: &ChainParams,
    rows: Vec<Vec6>,
    grid: &[f64],
    options: &SolverOptions,
) -> Result<Vec<Vec<Vec6>>> {
    let homogeneous = params.family.is_homogeneous() && options.propagation == Propagation::Auto;
    let mut out = if homogeneous {
        let q = params.generator_unchecked(grid[0]);
        let mut cache: HashMap<u64, Mat6> = HashMap::new();
        let mut current = rows;
        let mut out = vec![current.clone()];
        for w in grid.windows(2) {
            let dt = w[1] - w[0];
            let step = match cache.get(&dt.to_bits()) {
                Some(m) => *m,
                None => {
                    let m = linalg::expm(&linalg::scale(&q, dt))?;
                    cache.insert(dt.to_bits(), m);
                    m
                }
            };
            current = current.iter().map(|r| linalg::vecmul(r, &step)).collect();
            out.push(current.clone());
        }
        out
    } else {
        integrator::integrate(
            |t| params.generator_unchecked(t),
            rows,
            grid[0],
            grid,
            options.tolerances,
        )?
    };
    for (block, &t) in out.iter_mut().zip(grid) {
        for row in block.iter_mut() {
            repair_row(row, t)?;
        }
    }
    Ok(out)
}

/// Occupancy probabilities S(t) on an age grid starting at 0.
pub fn solve_master(params: &ChainParams, grid: &[f64]) -> Result<StateProbabilityCurve> {
    solve_master_with(params, grid, &SolverOptions::default())
}

pub fn solve_master_with(
    params: &ChainParams,
    grid: &[f64],
    options: &SolverOptions,
) -> Result<StateProbabilityCurve> {
    params.validate()?;
    check_grid(grid, 0.0, "age grid")?;
    let blocks = propagate(params, vec![params.s0], grid, options)?;
    Ok(StateProbabilityCurve {
        grid: grid.to_vec(),
        probs: blocks.into_iter().map(|b| b[0]).collect(),
    })
}

/// P(t, τ) for every τ in `tau_grid`, which must start at `t`.
pub fn transition_matrix(params: &ChainParams, t: f64, tau_grid: &[f64]) -> Result<TransitionMatrixSeries> {
    transition_matrix_with(params, t, tau_grid, &SolverOptions::default())
}

pub fn transition_matrix_with(
    params: &ChainParams,
    t: f64,
    tau_grid: &[f64],
    options: &SolverOptions,
) -> Result<TransitionMatrixSeries> {
    params.validate()?;
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("anchor age must be >= 0, got {t}")));
    }
    check_grid(tau_grid, t, "tau grid")?;
    let id = linalg::identity();
    let blocks = propagate(params, id.to_vec(), tau_grid, options)?;
    let matrices = blocks
        .into_iter()
        .map(|b| {
            let mut m = linalg::zeros();
            m.copy_from_slice(&b);
            m
        })
        .collect();
    Ok(TransitionMatrixSeries {
        anchor: t,
        tau_grid: tau_grid.to_vec(),
        matrices,
    })
}

/// Per-age occupancy probabilities `S_k(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateProbabilityCurve {
    pub grid: Vec<f64>,
    pub probs: Vec<Vec6>,
}

pub const CURVE_HEADER: [&str; 7] = ["age", "S1", "S2", "S3", "S4", "S5", "SF"];

impl StateProbabilityCurve {
    /// Row at exactly `age`, if the grid contains it.
    pub fn at(&self, age: f64) -> Option<&Vec6> {
        self.grid
            .binary_search_by(|g| g.total_cmp(&age))
            .ok()
            .map(|i| &self.probs[i])
    }

    pub fn survival(&self, k: State) -> Vec<f64> {
        survival_curve(self, k)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CURVE_HEADER)?;
        for (t, row) in self.grid.iter().zip(&self.probs) {
            let mut rec = vec![sig6(*t)];
            rec.extend(row.iter().map(|v| sig6(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != CURVE_HEADER {
            return Err(Error::Schema(format!("curve header must be {}", CURVE_HEADER.join(","))));
        }
        let mut grid = Vec::new();
        let mut probs = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("curve row {}: {e}", i + 2)))?;
            grid.push(vals[0]);
            let mut row = [0.0; N];
            row.copy_from_slice(&vals[1..]);
            probs.push(row);
        }
        Ok(StateProbabilityCurve { grid, probs })
    }
}

/// Cumulative occupancy 𝐒_k(t) = Σ_{m ≤ k} S_m(t); identically 1 for `F`.
pub fn survival_curve(curve: &StateProbabilityCurve, k: State) -> Vec<f64> {
    if k == State::F {
        return vec![1.0; curve.grid.len()];
    }
    curve
        .probs
        .iter()
        .map(|row| row[..=k.index()].iter().sum())
        .collect()
}

/// P(t, τ) for a fixed anchor `t` over increasing τ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrixSeries {
    pub anchor: f64,
    pub tau_grid: Vec<f64>,
    pub matrices: Vec<Mat6>,
}

pub const MATRIX_SERIES_HEADER: [&str; 5] = ["t", "tau", "i", "j", "p"];

impl TransitionMatrixSeries {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(MATRIX_SERIES_HEADER)?;
        self.write_rows(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Appends rows without a header, for series from several anchors.
    pub fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for (tau, m) in self.tau_grid.iter().zip(&self.matrices) {
            for i in State::ALL {
                for j in State::ALL {
                    w.write_record([
                        sig6(self.anchor),
                        sig6(*tau),
                        i.label().to_string(),
                        j.label().to_string(),
                        sig6(m[i.index()][j.index()]),
                    ])?;
                }
            }
        }
        Ok(())
    }
}
