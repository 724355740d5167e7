use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use super::{AnalysisError, Result};
use crate::efficiency::{classify_size, SizeClass};
use crate::store::ModelCard;

pub const REFERENCE_HEADER: [&str; 9] = [
    "name",
    "family",
    "backbone",
    "params_millions",
    "pretrain_dataset",
    "resolution_px",
    "recall1",
    "recall3",
    "recall5",
];

#[derive(Debug, Deserialize)]
struct RawRow {
    name: String,
    family: String,
    backbone: String,
    params_millions: f64,
    pretrain_dataset: String,
    resolution_px: u32,
    recall1: Option<f64>,
    recall3: Option<f64>,
    recall5: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: ModelCard,
    /// K -> Recall@K for the K values that were printed.
    pub recall_at: BTreeMap<usize, f64>,
}

impl ResultRow {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }

    pub fn size_class(&self) -> SizeClass {
        classify_size(self.model.params_millions)
    }
}

/// Recall results for a set of checkpoints; names are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn new(rows: Vec<ResultRow>) -> Result<Self> {
        let mut names = HashSet::new();
        for row in &rows {
            row.model.check().map_err(AnalysisError::InvalidRow)?;
            if !names.insert(row.model.name.as_str()) {
                return Err(AnalysisError::DuplicateModel(row.model.name.clone()));
            }
            for (k, v) in &row.recall_at {
                if !(0.0..=1.0).contains(v) {
                    return Err(AnalysisError::InvalidRow(format!(
                        "{}: Recall@{k} = {v} is outside [0, 1]",
                        row.model.name
                    )));
                }
            }
        }
        Ok(Self { rows })
    }

    /// Parses the reference CSV layout (see [`REFERENCE_HEADER`]).
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(AnalysisError::Csv)?.clone();
        if headers.is_empty() {
            return Ok(Self::default());
        }
        for col in REFERENCE_HEADER {
            if !headers.iter().any(|h| h == col) {
                return Err(AnalysisError::InvalidRow(format!("missing column {col}")));
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<RawRow>() {
            let raw = rec.map_err(AnalysisError::Csv)?;
            let recall_at = [(1, raw.recall1), (3, raw.recall3), (5, raw.recall5)]
                .into_iter()
                .filter_map(|(k, v)| v.map(|v| (k, v)))
                .collect();
            rows.push(ResultRow {
                model: ModelCard {
                    name: raw.name,
                    family: raw.family,
                    params_millions: raw.params_millions,
                    pretrain_dataset: raw.pretrain_dataset,
                    resolution_px: raw.resolution_px,
                    backbone: raw.backbone,
                },
                recall_at,
            });
        }
        Self::new(rows)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| AnalysisError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_csv_reader(file)
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.model.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&ResultRow> {
        self.get(name)
            .ok_or_else(|| AnalysisError::MissingModel(name.to_owned()))
    }

    pub fn filter(&self, keep: impl Fn(&ResultRow) -> bool) -> Self {
        Self {
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "name,family,backbone,params_millions,pretrain_dataset,resolution_px,recall1,recall3,recall5
A,F,A,100,D,224,0.5,,0.7
B,F,B,250,D,224,0.6,0.65,
";

    #[test]
    fn parses_optional_recalls() {
        let t = ResultsTable::from_csv_reader(CSV.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        let a = t.get("A").unwrap();
        assert_eq!(a.recall(1), Some(0.5));
        assert_eq!(a.recall(3), None);
        assert_eq!(a.recall(5), Some(0.7));
        assert_eq!(t.get("B").unwrap().size_class(), SizeClass::Medium);
    }

    #[test]
    fn rejects_duplicates_and_bad_recall() {
        let dup = format!("{CSV}A,F,A,100,D,224,0.5,,\n");
        assert!(matches!(
            ResultsTable::from_csv_reader(dup.as_bytes()),
            Err(AnalysisError::DuplicateModel(_))
        ));
        let bad = format!("{CSV}C,F,C,100,D,224,1.5,,\n");
        assert!(ResultsTable::from_csv_reader(bad.as_bytes()).is_err());
        let zero = format!("{CSV}C,F,C,0,D,224,0.5,,\n");
        assert!(ResultsTable::from_csv_reader(zero.as_bytes()).is_err());
    }

    #[test]
    fn empty_input_is_empty_table() {
        assert!(ResultsTable::from_csv_reader("".as_bytes()).unwrap().is_empty());
        let header_only = REFERENCE_HEADER.join(",") + "\n";
        assert!(ResultsTable::from_csv_reader(header_only.as_bytes()).unwrap().is_empty());
    }
}
