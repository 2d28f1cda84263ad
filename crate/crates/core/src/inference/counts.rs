use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chain::State;
use crate::error::{Error, Result};

/// Which survival rows a failed (state F) observation feeds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureRows {
    /// F follows every state, so it counts once for each of rows 1..5.
    #[default]
    All,
    /// Only the row of state 5.
    LastOnly,
}

/// `n_{k,t}`: how many pipes of whole-year age `t` were found in a state
/// reachable from `k`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    entries: BTreeMap<(u32, State), u64>,
    contributing: usize,
}

impl CountTable {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, k: State, age: u32) -> u64 {
        self.entries.get(&(age, k)).copied().unwrap_or(0)
    }

    /// `(age, k, n)` ordered by age, then state.
    pub fn iter(&self) -> impl Iterator<Item = (u32, State, u64)> + '_ {
        self.entries.iter().map(|(&(t, k), &n)| (t, k, n))
    }

    /// Sorted distinct ages with at least one count.
    pub fn ages(&self) -> Vec<u32> {
        let mut ages: Vec<u32> = self.entries.keys().map(|&(t, _)| t).collect();
        ages.dedup();
        ages
    }

    /// Observations that produced at least one count.
    pub fn contributing_observations(&self) -> usize {
        self.contributing
    }

    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    /// Sum of two tables, as if built from the union of their observations.
    pub fn merge(&self, other: &CountTable) -> CountTable {
        let mut out = self.clone();
        for (key, n) in &other.entries {
            *out.entries.entry(*key).or_insert(0) += n;
        }
        out.contributing += other.contributing;
        out
    }

    fn add(&mut self, k: State, age: u32) {
        *self.entries.entry((age, k)).or_insert(0) += 1;
    }
}

/// Tallies inspections into `n_{k,t}`. Ages are rounded to whole years.
pub fn build_counts(observations: &[(f64, State)], failure_rows: FailureRows) -> Result<CountTable> {
    let mut table = CountTable::default();
    for &(age, state) in observations {
        if !(age >= 0.0 && age.is_finite()) {
            return Err(Error::Data(format!("invalid inspection age {age}")));
        }
        let t = age.round() as u32;
        match state {
            State::S1 => continue,
            State::F => match failure_rows {
                FailureRows::All => {
                    for k in &State::ALL[..5] {
                        table.add(*k, t);
                    }
                }
                FailureRows::LastOnly => table.add(State::S5, t),
            },
            s => table.add(State::from_index(s.index() - 1).unwrap(), t),
        }
        table.contributing += 1;
    }
    Ok(table)
}
