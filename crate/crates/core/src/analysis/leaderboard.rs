use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use super::{AnalysisError, ResultRow, ResultsTable, Result};
use crate::efficiency::semantic_power_density;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Recall(usize),
    Phi,
}

impl Metric {
    pub fn label(self) -> String {
        match self {
            Metric::Recall(k) => format!("Recall@{k}"),
            Metric::Phi => "phi".into(),
        }
    }

    pub fn value(self, row: &ResultRow) -> Result<f64> {
        let missing = || AnalysisError::MissingMetric {
            model: row.model.name.clone(),
            metric: self.label(),
        };
        match self {
            Metric::Recall(k) => row.recall(k).ok_or_else(missing),
            Metric::Phi => {
                let r1 = row.recall(1).ok_or_else(missing)?;
                semantic_power_density(r1, row.model.params_millions)
                    .map_err(|e| AnalysisError::InvalidRow(format!("{}: {e}", row.model.name)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    SizeClass,
    Family,
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardEntry {
    pub name: String,
    pub family: String,
    pub pretrain_dataset: String,
    pub params_millions: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardGroup {
    /// `None` for an ungrouped leaderboard.
    pub key: Option<String>,
    pub entries: Vec<LeaderboardEntry>,
}

impl LeaderboardGroup {
    pub fn leader(&self) -> Option<&LeaderboardEntry> {
        self.entries.first()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Leaderboard {
    pub metric: String,
    pub groups: Vec<LeaderboardGroup>,
}

impl Leaderboard {
    pub fn group(&self, key: &str) -> Option<&LeaderboardGroup> {
        self.groups.iter().find(|g| g.key.as_deref() == Some(key))
    }
}

/// Rows sorted by descending metric, ties by ascending name. Groups follow
/// size-class order, or ascending label for family and dataset.
pub fn leaderboard(table: &ResultsTable, metric: Metric, group_by: Option<Grouping>) -> Result<Leaderboard> {
    // (sort key, display key) -> entries
    let mut groups: BTreeMap<(u8, String), Vec<LeaderboardEntry>> = BTreeMap::new();
    for row in table.rows() {
        let value = metric.value(row)?;
        let key = match group_by {
            None => (0, String::new()),
            Some(Grouping::SizeClass) => {
                let class = row.size_class();
                (class as u8, class.to_string())
            }
            Some(Grouping::Family) => (0, row.model.family.clone()),
            Some(Grouping::Dataset) => (0, row.model.pretrain_dataset.clone()),
        };
        groups.entry(key).or_default().push(LeaderboardEntry {
            name: row.model.name.clone(),
            family: row.model.family.clone(),
            pretrain_dataset: row.model.pretrain_dataset.clone(),
            params_millions: row.model.params_millions,
            value,
        });
    }
    let groups = groups
        .into_iter()
        .map(|((_, key), mut entries)| {
            entries.sort_by(|a, b| {
                b.value
                    .partial_cmp(&a.value)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| a.name.cmp(&b.name))
            });
            LeaderboardGroup {
                key: group_by.map(|_| key),
                entries,
            }
        })
        .collect();
    Ok(Leaderboard {
        metric: metric.label(),
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::ModelCard;
    use proptest::prelude::*;
    use std::collections::BTreeMap as Map;

    fn row(name: &str, params: f64, r1: f64) -> ResultRow {
        ResultRow {
            model: ModelCard {
                name: name.into(),
                family: if name.starts_with('M') { "M".into() } else { "V".into() },
                params_millions: params,
                pretrain_dataset: "d".into(),
                resolution_px: 224,
                backbone: name.into(),
            },
            recall_at: Map::from([(1, r1)]),
        }
    }

    #[test]
    fn single_row() {
        let t = ResultsTable::new(vec![row("A", 100.0, 0.5)]).unwrap();
        let lb = leaderboard(&t, Metric::Recall(1), None).unwrap();
        assert_eq!(lb.groups.len(), 1);
        assert_eq!(lb.groups[0].leader().unwrap().name, "A");
    }

    #[test]
    fn grouped_by_size() {
        let t = ResultsTable::new(vec![
            row("Big", 1800.0, 0.77),
            row("MobileB", 150.0, 0.653),
            row("Small2", 62.0, 0.432),
            row("Conv", 351.0, 0.645),
        ])
        .unwrap();
        let lb = leaderboard(&t, Metric::Recall(1), Some(Grouping::SizeClass)).unwrap();
        let keys: Vec<_> = lb.groups.iter().map(|g| g.key.clone().unwrap()).collect();
        assert_eq!(keys, ["Small", "Medium", "VeryLarge"]);
        assert_eq!(lb.group("Small").unwrap().leader().unwrap().name, "MobileB");
    }

    #[test]
    fn phi_and_missing_metric() {
        let t = ResultsTable::new(vec![row("A", 62.0, 0.432), row("MB", 150.0, 0.653)]).unwrap();
        let lb = leaderboard(&t, Metric::Phi, None).unwrap();
        assert_eq!(lb.groups[0].leader().unwrap().name, "MB");
        assert!(matches!(
            leaderboard(&t, Metric::Recall(5), None),
            Err(AnalysisError::MissingMetric { .. })
        ));
    }

    #[test]
    fn ties_break_by_name() {
        let t = ResultsTable::new(vec![row("b", 1.0, 0.5), row("a", 1.0, 0.5)]).unwrap();
        let lb = leaderboard(&t, Metric::Recall(1), None).unwrap();
        let names: Vec<_> = lb.groups[0].entries.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
    }

    proptest! {
        #[test]
        fn permutation_does_not_change_order(
            recalls in proptest::collection::vec(0u8..5, 1..12),
            seed in any::<u64>(),
            group in 0u8..3,
        ) {
            let rows: Vec<ResultRow> = recalls
                .iter()
                .enumerate()
                .map(|(i, &r)| row(&format!("{}{i}", if i % 2 == 0 { "M" } else { "V" }), 50.0 + 100.0 * i as f64, f64::from(r) / 5.0))
                .collect();
            let mut shuffled = rows.clone();
            // deterministic Fisher-Yates from the seed
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            let grouping = [None, Some(Grouping::SizeClass), Some(Grouping::Family)][group as usize];
            let a = leaderboard(&ResultsTable::new(rows).unwrap(), Metric::Phi, grouping).unwrap();
            let b = leaderboard(&ResultsTable::new(shuffled).unwrap(), Metric::Phi, grouping).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
