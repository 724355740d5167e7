//! Catalog files (CSV or JSON lines) and the seeded review sampler.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Attribute, AttributeKind, CaptionAudit, CaptionError, ProductMetadata};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub sku_id: String,
    pub raw_description: String,
    #[serde(default)]
    pub tag_description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    #[serde(default)]
    pub caption: Option<String>,
}

impl CatalogRecord {
    pub fn to_metadata(&self) -> Result<ProductMetadata, CaptionError> {
        let explicit = [
            (AttributeKind::Brand, &self.brand),
            (AttributeKind::Color, &self.color),
            (AttributeKind::Size, &self.size),
            (AttributeKind::Form, &self.form),
        ]
        .into_iter()
        .filter_map(|(kind, v)| {
            v.as_deref()
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(|v| Attribute::new(kind, v))
        })
        .collect();
        ProductMetadata::new(&self.sku_id, &self.raw_description, &self.tag_description, explicit)
    }
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("jsonl" | "ndjson" | "json")
    )
}

fn catalog_err(path: &Path, message: impl std::fmt::Display) -> CaptionError {
    CaptionError::Catalog {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Reads `.jsonl`/`.ndjson`/`.json` as JSON lines, anything else as CSV.
pub fn read_catalog(path: &Path) -> Result<Vec<CatalogRecord>, CaptionError> {
    let file = fs::File::open(path).map_err(|e| catalog_err(path, e))?;
    if is_jsonl(path) {
        let mut out = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| catalog_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| catalog_err(path, format!("line {}: {e}", n + 1)))?;
            out.push(rec);
        }
        Ok(out)
    } else {
        csv::Reader::from_reader(file)
            .deserialize()
            .collect::<Result<Vec<CatalogRecord>, _>>()
            .map_err(|e| catalog_err(path, e))
    }
}

pub fn write_catalog(path: &Path, records: &[CatalogRecord]) -> Result<(), CaptionError> {
    let mut buf = Vec::new();
    if is_jsonl(path) {
        for r in records {
            serde_json::to_writer(&mut buf, r).map_err(|e| catalog_err(path, e))?;
            buf.push(b'\n');
        }
    } else {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["sku_id", "raw_description", "tag_description", "brand", "color", "size", "form", "caption"])
            .map_err(|e| catalog_err(path, e))?;
        for r in records {
            let opt = |v: &Option<String>| v.clone().unwrap_or_default();
            w.write_record([
                r.sku_id.clone(),
                r.raw_description.clone(),
                r.tag_description.clone(),
                opt(&r.brand),
                opt(&r.color),
                opt(&r.size),
                opt(&r.form),
                opt(&r.caption),
            ])
            .map_err(|e| catalog_err(path, e))?;
        }
        w.flush().map_err(|e| catalog_err(path, e))?;
        drop(w);
    }
    fs::write(path, buf).map_err(|e| catalog_err(path, e))
}

/// One JSON object per line.
pub fn write_audits(path: &Path, audits: &[CaptionAudit]) -> Result<(), CaptionError> {
    let mut file = fs::File::create(path).map_err(|e| catalog_err(path, e))?;
    for a in audits {
        let line = serde_json::to_string(a).map_err(|e| catalog_err(path, e))?;
        writeln!(file, "{line}").map_err(|e| catalog_err(path, e))?;
    }
    Ok(())
}

/// Independent review subsets of `sample_size` catalog indices, one per
/// seed, each sorted ascending. The sample is capped at the catalog size.
pub fn review_samples(catalog_len: usize, sample_size: usize, seeds: &[u64]) -> Vec<Vec<usize>> {
    seeds
        .iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, catalog_len, sample_size.min(catalog_len)).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<CatalogRecord> {
        vec![
            CatalogRecord {
                sku_id: "a".into(),
                raw_description: "Syrup, chocolate".into(),
                tag_description: "brand: Hershey's; size: 16 oz".into(),
                color: Some("dark brown".into()),
                ..Default::default()
            },
            CatalogRecord {
                sku_id: "b".into(),
                raw_description: "Milk \"whole\"".into(),
                caption: Some("The product is milk.".into()),
                ..Default::default()
            },
        ]
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cat.csv");
        write_catalog(&p, &records()).unwrap();
        let back = read_catalog(&p).unwrap();
        assert_eq!(back[0].sku_id, "a");
        assert_eq!(back[0].color.as_deref(), Some("dark brown"));
        assert_eq!(back[1].caption.as_deref(), Some("The product is milk."));
        assert_eq!(back[1].raw_description, "Milk \"whole\"");
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cat.jsonl");
        write_catalog(&p, &records()).unwrap();
        assert_eq!(read_catalog(&p).unwrap(), records());
    }

    #[test]
    fn metadata_merges_columns_and_tags() {
        let m = records()[0].to_metadata().unwrap();
        assert_eq!(m.attribute(AttributeKind::Brand), Some("Hershey's"));
        assert_eq!(m.attribute(AttributeKind::Color), Some("dark brown"));
        assert_eq!(m.attribute(AttributeKind::Size), Some("16 oz"));
    }

    #[test]
    fn malformed_jsonl_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        fs::write(&p, "{\"sku_id\":\"a\",\"raw_description\":\"x\"}\n{oops\n").unwrap();
        let err = read_catalog(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn review_samples_are_seeded() {
        let s = review_samples(409, 250, &[1, 2]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].len(), 250);
        assert_ne!(s[0], s[1]);
        assert_eq!(review_samples(409, 250, &[1])[0], s[0]);
        assert!(s[0].windows(2).all(|w| w[0] < w[1]));
        assert_eq!(review_samples(3, 10, &[7])[0], vec![0, 1, 2]);
    }
}
