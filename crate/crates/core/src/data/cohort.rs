use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{CohortDataset, InspectionRecord, Observation, Provenance};
use crate::chain::State;
use crate::error::{Error, Result};

/// Material/content filter plus the damage code that defines the state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub name: String,
    pub materials: Vec<String>,
    pub contents: Vec<String>,
    pub damage_code: String,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.materials.is_empty() || self.contents.is_empty() || self.damage_code.trim().is_empty() {
            return Err(Error::Domain(format!(
                "cohort '{}' needs non-empty material, content and damage-code filters",
                self.name
            )));
        }
        Ok(())
    }

    fn matches(&self, r: &InspectionRecord) -> bool {
        let any = |list: &[String], v: &str| list.iter().any(|x| x.eq_ignore_ascii_case(v));
        any(&self.materials, &r.material) && any(&self.contents, &r.content)
    }
}

/// Collapses inspection rows to one observation per (pipe, inspection date):
/// the worst recorded severity for the cohort's damage code, or state 1 when
/// no such damage was recorded.
pub fn build_cohort(records: &[InspectionRecord], spec: &CohortSpec) -> Result<CohortDataset> {
    spec.validate()?;
    let mut inspections: BTreeMap<(&str, NaiveDate), (i32, State)> = BTreeMap::new();
    for r in records.iter().filter(|r| spec.matches(r)) {
        let entry = inspections
            .entry((r.pipe_id.as_str(), r.inspection_date))
            .or_insert((r.construction_year, State::S1));
        if entry.0 != r.construction_year {
            return Err(Error::Data(format!(
                "pipe {} has conflicting construction years {} and {}",
                r.pipe_id, entry.0, r.construction_year
            )));
        }
        if r.damage_code.eq_ignore_ascii_case(&spec.damage_code) {
            let state = r.severity.unwrap_or(State::S1);
            entry.1 = entry.1.max(state);
        }
    }
    if inspections.is_empty() {
        return Err(Error::EmptyCohort(spec.name.clone()));
    }
    let observations = inspections
        .into_iter()
        .map(|((pipe, date), (built, state))| Observation {
            pipe_id: pipe.to_string(),
            age: f64::from(chrono::Datelike::year(&date) - built),
            state,
        })
        .collect();
    CohortDataset::new(
        observations,
        Provenance {
            cohort: Some(spec.clone()),
            ..Provenance::default()
        },
    )
}
