//! Recall@K, CMC and the Recall@5 - Recall@1 gap under the single-gallery-shot
//! protocol. Ranks are 1-based.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::similarity::RankingResult;
use crate::store::ModelCard;

pub const DEFAULT_KS: [usize; 3] = [1, 3, 5];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("probe {0} is missing from the ranking or the ground truth")]
    MissingProbe(String),
    #[error("K = {k} is out of range (gallery size {gallery}, ranking depth {depth})")]
    KOutOfRange { k: usize, gallery: usize, depth: usize },
    #[error("report has no Recall@{0}")]
    MissingK(usize),
    #[error("ground truth for probe {probe} names unknown gallery id {gallery}")]
    UnknownGalleryId { probe: String, gallery: String },
    #[error("probe {0} appears more than once in the ground truth")]
    DuplicateProbe(String),
    #[error("inconsistent recalls: {0}")]
    InconsistentRecalls(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Probe -> ground-truth gallery id, exactly one per probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pairs: Vec<(String, String)>,
}

impl ProbeSet {
    /// Checks the mapping is a function and every target exists in `gallery_ids`.
    pub fn new(pairs: Vec<(String, String)>, gallery_ids: &[String]) -> Result<Self> {
        let gallery: HashSet<&str> = gallery_ids.iter().map(String::as_str).collect();
        let mut seen = HashSet::new();
        for (probe, target) in &pairs {
            if !seen.insert(probe.as_str()) {
                return Err(MetricsError::DuplicateProbe(probe.clone()));
            }
            if !gallery.contains(target.as_str()) {
                return Err(MetricsError::UnknownGalleryId {
                    probe: probe.clone(),
                    gallery: target.clone(),
                });
            }
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    /// Every id in `probe_ids` must have a ground-truth entry.
    pub fn check_total(&self, probe_ids: &[String]) -> Result<()> {
        let known: HashSet<&str> = self.pairs.iter().map(|(p, _)| p.as_str()).collect();
        match probe_ids.iter().find(|id| !known.contains(id.as_str())) {
            Some(id) => Err(MetricsError::MissingProbe(id.clone())),
            None => Ok(()),
        }
    }
}

/// Reads `probe_id,gallery_id` rows (header required).
pub fn read_truth_csv(reader: impl std::io::Read) -> std::result::Result<Vec<(String, String)>, csv::Error> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader)
        .deserialize::<(String, String)>()
        .collect()
}

/// 1-based rank of each probe's ground truth, in truth order. `None` means
/// the ground truth lies beyond the ranking depth.
pub fn ground_truth_ranks(ranking: &RankingResult, truth: &ProbeSet) -> Result<Vec<Option<usize>>> {
    let probe_row: HashMap<&str, usize> = ranking
        .probe_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let gallery_col: HashMap<&str, u32> = ranking
        .gallery_ids()
        .iter()
        .enumerate()
        .map(|(j, id)| (id.as_str(), j as u32))
        .collect();

    truth
        .pairs
        .iter()
        .map(|(probe, target)| {
            let row = *probe_row
                .get(probe.as_str())
                .ok_or_else(|| MetricsError::MissingProbe(probe.clone()))?;
            let col = *gallery_col
                .get(target.as_str())
                .ok_or_else(|| MetricsError::UnknownGalleryId {
                    probe: probe.clone(),
                    gallery: target.clone(),
                })?;
            Ok(ranking.indices(row).iter().position(|&j| j == col).map(|p| p + 1))
        })
        .collect()
}

fn check_k(ranking: &RankingResult, k: usize) -> Result<()> {
    if k == 0 || k > ranking.gallery_size() || k > ranking.depth() {
        return Err(MetricsError::KOutOfRange {
            k,
            gallery: ranking.gallery_size(),
            depth: ranking.depth(),
        });
    }
    Ok(())
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Fraction of probes whose ground truth is ranked within the top `k`.
pub fn recall_at_k(ranking: &RankingResult, truth: &ProbeSet, k: usize) -> Result<f64> {
    check_k(ranking, k)?;
    let ranks = ground_truth_ranks(ranking, truth)?;
    let hits = ranks.iter().filter(|r| matches!(r, Some(r) if *r <= k)).count();
    Ok(fraction(hits, ranks.len()))
}

/// CMC curve; element `k - 1` is Recall@k for k in 1..=kmax.
pub fn cmc_curve(ranking: &RankingResult, truth: &ProbeSet, kmax: usize) -> Result<Vec<f64>> {
    check_k(ranking, kmax)?;
    let ranks = ground_truth_ranks(ranking, truth)?;
    let mut at_rank = vec![0usize; kmax + 1];
    for r in ranks.iter().flatten() {
        if *r <= kmax {
            at_rank[*r] += 1;
        }
    }
    let mut hits = 0;
    Ok((1..=kmax)
        .map(|k| {
            hits += at_rank[k];
            fraction(hits, ranks.len())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: ModelCard,
    pub n_probes: usize,
    pub gallery_size: usize,
    pub recall_at: BTreeMap<usize, f64>,
    /// Full CMC up to the ranking depth; empty for reports assembled from
    /// published recall values.
    pub cmc: Vec<f64>,
    pub gap_delta: Option<f64>,
}

impl EvalReport {
    /// Builds a report from a full ranking. Every K in `ks` must lie within
    /// the ranking depth.
    pub fn evaluate(
        model: ModelCard,
        ranking: &RankingResult,
        truth: &ProbeSet,
        ks: &[usize],
    ) -> Result<Self> {
        let cmc = cmc_curve(ranking, truth, ranking.depth())?;
        let mut recall_at = BTreeMap::new();
        for &k in ks {
            check_k(ranking, k)?;
            recall_at.insert(k, cmc[k - 1]);
        }
        let mut report = Self {
            model,
            n_probes: truth.len(),
            gallery_size: ranking.gallery_size(),
            recall_at,
            cmc,
            gap_delta: None,
        };
        report.gap_delta = discriminative_gap(&report).ok();
        Ok(report)
    }

    /// Report carrying only recall values, as printed in a results table.
    pub fn from_recalls(model: ModelCard, recall_at: BTreeMap<usize, f64>) -> Self {
        let mut report = Self {
            model,
            n_probes: 0,
            gallery_size: 0,
            recall_at,
            cmc: Vec::new(),
            gap_delta: None,
        };
        report.gap_delta = discriminative_gap(&report).ok();
        report
    }

    /// Flat JSON document: model card fields, one `recall@K` key per K,
    /// `delta`, and the CMC vector.
    pub fn to_json(&self) -> Value {
        let mut doc = Map::new();
        doc.insert("model".into(), json!(self.model.name));
        doc.insert("family".into(), json!(self.model.family));
        doc.insert("backbone".into(), json!(self.model.backbone));
        doc.insert("params_millions".into(), json!(self.model.params_millions));
        doc.insert("pretrain_dataset".into(), json!(self.model.pretrain_dataset));
        doc.insert("resolution_px".into(), json!(self.model.resolution_px));
        doc.insert("probes".into(), json!(self.n_probes));
        doc.insert("gallery_size".into(), json!(self.gallery_size));
        for (k, v) in &self.recall_at {
            doc.insert(format!("recall@{k}"), json!(round_to(*v, 6)));
        }
        doc.insert("delta".into(), self.gap_delta.map_or(Value::Null, |d| json!(round_to(d, 6))));
        doc.insert(
            "cmc".into(),
            Value::Array(self.cmc.iter().map(|v| json!(round_to(*v, 6))).collect()),
        );
        Value::Object(doc)
    }

    pub const CSV_HEADER: &'static str = "model,recall@1,recall@3,recall@5,delta";

    /// `model,recall@1,recall@3,recall@5,delta` with 3 decimals; missing
    /// values are left empty.
    pub fn csv_row(&self) -> String {
        let cell = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_default();
        let name = if self.model.name.contains([',', '"']) {
            format!("\"{}\"", self.model.name.replace('"', "\"\""))
        } else {
            self.model.name.clone()
        };
        format!(
            "{},{},{},{},{}",
            name,
            cell(self.recall_at.get(&1).copied()),
            cell(self.recall_at.get(&3).copied()),
            cell(self.recall_at.get(&5).copied()),
            cell(self.gap_delta),
        )
    }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let p = 10f64.powi(decimals);
    (v * p).round() / p
}

/// Recall@5 minus Recall@1.
pub fn discriminative_gap(report: &EvalReport) -> Result<f64> {
    let r1 = *report.recall_at.get(&1).ok_or(MetricsError::MissingK(1))?;
    let r5 = *report.recall_at.get(&5).ok_or(MetricsError::MissingK(5))?;
    if r5 < r1 {
        return Err(MetricsError::InconsistentRecalls(format!(
            "Recall@5 {r5} is below Recall@1 {r1}"
        )));
    }
    Ok(r5 - r1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::{rank, ScoreMatrix, TopK};

    fn card() -> ModelCard {
        ModelCard {
            name: "test".into(),
            family: "ViT".into(),
            params_millions: 100.0,
            pretrain_dataset: "synthetic".into(),
            resolution_px: 224,
            backbone: "ViT".into(),
        }
    }

    fn gids(n: usize) -> Vec<String> {
        (0..n).map(|j| format!("g{j}")).collect()
    }

    fn ranking(rows: &[Vec<f64>]) -> RankingResult {
        let p: Vec<String> = (0..rows.len()).map(|i| format!("p{i}")).collect();
        let s = ScoreMatrix::new(p, gids(rows[0].len()), rows.concat()).unwrap();
        rank(&s, TopK::All).unwrap()
    }

    fn truth(targets: &[usize], g: usize) -> ProbeSet {
        let pairs = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| (format!("p{i}"), format!("g{t}")))
            .collect();
        ProbeSet::new(pairs, &gids(g)).unwrap()
    }

    #[test]
    fn perfect_retrieval() {
        let rows: Vec<Vec<f64>> =
            (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let r = ranking(&rows);
        let t = truth(&[0, 1, 2, 3], 4);
        for k in 1..=4 {
            assert_eq!(recall_at_k(&r, &t, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn exhaustive_window_is_one() {
        let rows = vec![vec![0.9, 0.1, 0.5], vec![0.2, 0.3, 0.1]];
        let r = ranking(&rows);
        assert_eq!(recall_at_k(&r, &truth(&[1, 2], 3), 3).unwrap(), 1.0);
    }

    #[test]
    fn hand_built_instance_matches_enumeration() {
        // 5 probes x 6 gallery; ground truth ranks are 1, 3, 6, 2, 1
        let rows = vec![
            vec![0.9, 0.1, 0.2, 0.3, 0.4, 0.5],
            vec![0.8, 0.7, 0.6, 0.1, 0.0, -0.1],
            vec![0.5, 0.4, 0.3, 0.2, 0.1, 0.0],
            vec![0.1, 0.2, 0.3, 0.4, 0.6, 0.5],
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.9],
        ];
        let t = truth(&[0, 2, 5, 5, 5], 6);
        let r = ranking(&rows);
        assert_eq!(
            ground_truth_ranks(&r, &t).unwrap(),
            vec![Some(1), Some(3), Some(6), Some(2), Some(1)]
        );
        let expect = [2.0 / 5.0, 3.0 / 5.0, 4.0 / 5.0, 4.0 / 5.0, 4.0 / 5.0, 1.0];
        for k in 1..=6 {
            assert_eq!(recall_at_k(&r, &t, k).unwrap(), expect[k - 1]);
        }
    }

    #[test]
    fn single_probe_third() {
        let r = ranking(&[vec![0.9, 0.8, 0.7, 0.6, 0.5]]);
        let c = cmc_curve(&r, &truth(&[2], 5), 5).unwrap();
        assert_eq!(c, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn truth_ranked_last() {
        let r = ranking(&[vec![0.9, 0.8, 0.1], vec![0.0, 0.5, -0.5]]);
        let c = cmc_curve(&r, &truth(&[2, 2], 3), 3).unwrap();
        assert_eq!(c, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn errors() {
        let r = ranking(&[vec![0.9, 0.8]]);
        let t = truth(&[0], 2);
        assert!(matches!(recall_at_k(&r, &t, 0), Err(MetricsError::KOutOfRange { .. })));
        assert!(matches!(recall_at_k(&r, &t, 3), Err(MetricsError::KOutOfRange { .. })));
        let other = ProbeSet::new(vec![("missing".into(), "g0".into())], &gids(2)).unwrap();
        assert_eq!(
            recall_at_k(&r, &other, 1),
            Err(MetricsError::MissingProbe("missing".into()))
        );
        assert!(matches!(
            ProbeSet::new(vec![("p0".into(), "nope".into())], &gids(2)),
            Err(MetricsError::UnknownGalleryId { .. })
        ));
        assert!(matches!(
            ProbeSet::new(vec![("p0".into(), "g0".into()), ("p0".into(), "g1".into())], &gids(2)),
            Err(MetricsError::DuplicateProbe(_))
        ));
    }

    #[test]
    fn truth_totality_and_csv() {
        let pairs = read_truth_csv("probe_id,gallery_id\np0, g1\np1,g0\n".as_bytes()).unwrap();
        assert_eq!(pairs[0], ("p0".to_string(), "g1".to_string()));
        let t = ProbeSet::new(pairs, &gids(2)).unwrap();
        assert!(t.check_total(&["p0".into(), "p1".into()]).is_ok());
        assert_eq!(
            t.check_total(&["p0".into(), "p2".into()]),
            Err(MetricsError::MissingProbe("p2".into()))
        );
        assert!(read_truth_csv("probe_id,gallery_id\np0\n".as_bytes()).is_err());
    }

    #[test]
    fn truncated_ranking_limits_k() {
        let s = ScoreMatrix::new(vec!["p0".into()], gids(4), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let r = rank(&s, TopK::K(2)).unwrap();
        let t = truth(&[0], 4);
        assert_eq!(recall_at_k(&r, &t, 2).unwrap(), 0.0);
        assert!(recall_at_k(&r, &t, 3).is_err());
    }

    fn published(r1: f64, r5: f64) -> EvalReport {
        EvalReport::from_recalls(card(), BTreeMap::from([(1, r1), (3, r1), (5, r5)]))
    }

    #[test]
    fn gap_from_published_recalls() {
        assert!((discriminative_gap(&published(0.770, 0.945)).unwrap() - 0.175).abs() < 1e-12);
        assert!((discriminative_gap(&published(0.758, 0.937)).unwrap() - 0.179).abs() < 1e-12);
        assert_eq!(discriminative_gap(&published(0.5, 0.5)).unwrap(), 0.0);
    }

    #[test]
    fn gap_missing_k() {
        let r = EvalReport::from_recalls(card(), BTreeMap::from([(1, 0.5)]));
        assert_eq!(discriminative_gap(&r), Err(MetricsError::MissingK(5)));
        assert_eq!(r.gap_delta, None);
    }

    #[test]
    fn report_serialization() {
        let rows: Vec<Vec<f64>> =
            (0..6).map(|i| (0..6).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let rep = EvalReport::evaluate(card(), &ranking(&rows), &truth(&[0, 1, 2, 3, 4, 5], 6), &DEFAULT_KS)
            .unwrap();
        assert_eq!(rep.csv_row(), "test,1.000,1.000,1.000,0.000");
        let j = rep.to_json();
        assert_eq!(j["recall@1"], 1.0);
        assert_eq!(j["cmc"].as_array().unwrap().len(), 6);
        assert_eq!(*rep.cmc.last().unwrap(), 1.0);
    }
}
