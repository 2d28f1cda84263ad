use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::State;
use crate::error::{Error, Result};

pub const INSPECTION_HEADER: [&str; 7] = [
    "pipe_id",
    "material",
    "content",
    "construction_year",
    "inspection_date",
    "damage_code",
    "severity",
];

/// One row of a normalised inspection export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InspectionRecord {
    pub pipe_id: String,
    pub material: String,
    pub content: String,
    pub construction_year: i32,
    pub inspection_date: NaiveDate,
    /// Empty when the inspection found no damage.
    pub damage_code: String,
    /// `None` means no damage observed (pristine).
    pub severity: Option<State>,
}

impl InspectionRecord {
    /// Whole years between construction and inspection.
    pub fn age(&self) -> i32 {
        self.inspection_date.year() - self.construction_year
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowRejection {
    /// 1-based line number in the file, header included.
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub records: Vec<InspectionRecord>,
    pub rejected: Vec<RowRejection>,
    pub digest: String,
}

impl LoadReport {
    pub fn accepted(&self) -> usize {
        self.records.len()
    }
}

pub fn load_inspections(path: impl AsRef<Path>) -> Result<LoadReport> {
    let mut bytes = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    read_inspections(bytes.as_slice())
}

pub fn read_inspections<R: Read>(mut reader: R) -> Result<LoadReport> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let digest = hex::encode(Sha256::digest(&bytes));

    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes.as_slice());
    let header = r.headers()?.clone();
    let mut column = [0usize; 7];
    for (slot, name) in column.iter_mut().zip(INSPECTION_HEADER) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing required column '{name}'")))?;
    }

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = match rec {
            Ok(rec) => rec,
            Err(e) => {
                rejected.push(RowRejection {
                    row,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let field = |c: usize| rec.get(column[c]).unwrap_or("");
        match parse_row(&field) {
            Ok(record) => records.push(record),
            Err(reason) => rejected.push(RowRejection { row, reason }),
        }
    }
    Ok(LoadReport {
        records,
        rejected,
        digest,
    })
}

fn parse_row<'a>(field: &dyn Fn(usize) -> &'a str) -> std::result::Result<InspectionRecord, String> {
    let pipe_id = field(0);
    if pipe_id.is_empty() {
        return Err("empty pipe_id".into());
    }
    let construction_year: i32 = field(3)
        .parse()
        .map_err(|_| format!("bad construction_year '{}'", field(3)))?;
    let inspection_date = NaiveDate::parse_from_str(field(4), "%Y-%m-%d")
        .map_err(|_| format!("bad inspection_date '{}'", field(4)))?;
    if inspection_date.year() < construction_year {
        return Err(format!(
            "inspection year {} precedes construction year {construction_year}",
            inspection_date.year()
        ));
    }
    let severity = match field(6) {
        "" => None,
        s @ ("1" | "2" | "3" | "4" | "5" | "F") => Some(s.parse::<State>().map_err(|e| e.to_string())?),
        other => return Err(format!("severity '{other}' not in 1..5 or F")),
    };
    Ok(InspectionRecord {
        pipe_id: pipe_id.to_string(),
        material: field(1).to_string(),
        content: field(2).to_string(),
        construction_year,
        inspection_date,
        damage_code: field(5).to_string(),
        severity,
    })
}

pub fn write_inspections<W: Write>(records: &[InspectionRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(INSPECTION_HEADER)?;
    for r in records {
        w.write_record([
            r.pipe_id.clone(),
            r.material.clone(),
            r.content.clone(),
            r.construction_year.to_string(),
            r.inspection_date.format("%Y-%m-%d").to_string(),
            r.damage_code.clone(),
            r.severity.map(|s| s.label().to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
