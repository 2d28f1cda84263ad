//! Inspection records, cohorts, and synthetic cohorts.

mod cohort;
mod inspections;
mod simulate;

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::chain::State;
use crate::error::{Error, Result};
use crate::format::sig6;

pub use cohort::{build_cohort, CohortSpec};
pub use inspections::{
    load_inspections, read_inspections, write_inspections, InspectionRecord, LoadReport, RowRejection,
    INSPECTION_HEADER,
};
pub use simulate::{sample_next_transition, simulate_cohort, simulate_pipe, AgeSampler};

/// One inspection outcome: a pipe observed in `state` at `age` years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub pipe_id: String,
    pub age: f64,
    pub state: State,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub cohort: Option<CohortSpec>,
    /// SHA-256 of the source file, hex encoded.
    pub source_digest: Option<String>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortDataset {
    pub observations: Vec<Observation>,
    pub provenance: Provenance,
}

pub const COHORT_HEADER: [&str; 3] = ["pipe_id", "age", "state"];

impl CohortDataset {
    pub fn new(observations: Vec<Observation>, provenance: Provenance) -> Result<Self> {
        if let Some(o) = observations.iter().find(|o| !(o.age >= 0.0 && o.age.is_finite())) {
            return Err(Error::Data(format!("pipe {}: invalid age {}", o.pipe_id, o.age)));
        }
        Ok(CohortDataset {
            observations,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Distinct pipe identifiers, sorted.
    pub fn pipe_ids(&self) -> Vec<String> {
        self.observations
            .iter()
            .map(|o| o.pipe_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Observations of the given pipes only.
    pub fn subset(&self, ids: &[String]) -> CohortDataset {
        let keep: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        CohortDataset {
            observations: self
                .observations
                .iter()
                .filter(|o| keep.contains(o.pipe_id.as_str()))
                .cloned()
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn age_states(&self) -> Vec<(f64, State)> {
        self.observations.iter().map(|o| (o.age, o.state)).collect()
    }

    /// Oldest inspected age, if any.
    pub fn max_age(&self) -> Option<f64> {
        self.observations.iter().map(|o| o.age).reduce(f64::max)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(COHORT_HEADER)?;
        for o in &self.observations {
            w.write_record([o.pipe_id.clone(), sig6(o.age), o.state.label().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != COHORT_HEADER {
            return Err(Error::Schema(format!(
                "cohort header must be {}, got {}",
                COHORT_HEADER.join(","),
                header.join(",")
            )));
        }
        let mut observations = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            let age: f64 = rec[1]
                .parse()
                .map_err(|_| Error::Data(format!("row {row}: bad age '{}'", &rec[1])))?;
            let state: State = rec[2]
                .parse()
                .map_err(|e| Error::Data(format!("row {row}: {e}")))?;
            observations.push(Observation {
                pipe_id: rec[0].to_string(),
                age,
                state,
            });
        }
        CohortDataset::new(observations, Provenance::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(id: &str, age: f64, state: State) -> Observation {
        Observation {
            pipe_id: id.into(),
            age,
            state,
        }
    }

    #[test]
    fn cohort_csv_round_trip() {
        let d = CohortDataset::new(
            vec![obs("a", 12.0, State::S3), obs("b", 0.0, State::F), obs("a", 20.0, State::S4)],
            Provenance::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"pipe_id,age,state\n"));
        assert_eq!(CohortDataset::read_csv(buf.as_slice()).unwrap(), d);
        assert_eq!(d.pipe_ids(), vec!["a".to_string(), "b".to_string()]);
        assert_eq!(d.subset(&["a".to_string()]).len(), 2);
        assert_eq!(d.max_age(), Some(20.0));
    }

    #[test]
    fn rejects_bad_cohort_rows() {
        assert!(CohortDataset::read_csv("pipe,age,state\n".as_bytes()).is_err());
        assert!(CohortDataset::read_csv("pipe_id,age,state\nx,3,7\n".as_bytes()).is_err());
        assert!(CohortDataset::read_csv("pipe_id,age,state\nx,-3,2\n".as_bytes()).is_err());
    }
}
