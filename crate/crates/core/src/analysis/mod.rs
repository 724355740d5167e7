//! Derived quantities computed from Recall columns: accuracy deltas, compute
//! ratios between input resolutions, and leaderboards.

mod leaderboard;
mod table;

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::store::ModelCard;

pub use leaderboard::{leaderboard, Grouping, Leaderboard, LeaderboardEntry, LeaderboardGroup, Metric};
pub use table::{ResultRow, ResultsTable, REFERENCE_HEADER};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("baseline is zero; relative change is undefined")]
    ZeroBaseline,
    #[error("invalid resolution pair {low}px -> {high}px")]
    InvalidResolution { low: u32, high: u32 },
    #[error("backbone mismatch: {low} vs {high}")]
    BackboneMismatch { low: String, high: String },
    #[error("{model} has no {metric}")]
    MissingMetric { model: String, metric: String },
    #[error("model {0} is not in the results table")]
    MissingModel(String),
    #[error("duplicate model name {0}")]
    DuplicateModel(String),
    #[error("invalid row: {0}")]
    InvalidRow(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaKind {
    /// `(variant - baseline) * 100`
    AbsolutePoints,
    /// `(variant - baseline) / baseline * 100`
    RelativePercent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaReport {
    pub label: String,
    pub baseline: f64,
    pub variant: f64,
    pub delta: f64,
    pub kind: DeltaKind,
}

impl DeltaReport {
    pub fn new(label: impl Into<String>, baseline: f64, variant: f64, kind: DeltaKind) -> Result<Self> {
        let delta = match kind {
            DeltaKind::AbsolutePoints => absolute_gain_points(baseline, variant),
            DeltaKind::RelativePercent => relative_change_percent(baseline, variant)?,
        };
        Ok(Self {
            label: label.into(),
            baseline,
            variant,
            delta,
            kind,
        })
    }

    /// Signed, one decimal, with a `%` suffix for relative deltas.
    pub fn display(&self) -> String {
        match self.kind {
            DeltaKind::AbsolutePoints => format!("{:+.1}", self.delta),
            DeltaKind::RelativePercent => format!("{:+.1}%", self.delta),
        }
    }
}

/// Difference in percentage points.
pub fn absolute_gain_points(baseline: f64, variant: f64) -> f64 {
    (variant - baseline) * 100.0
}

/// Change relative to the baseline, in percent.
pub fn relative_change_percent(baseline: f64, variant: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(AnalysisError::ZeroBaseline);
    }
    Ok((variant - baseline) / baseline * 100.0)
}

/// Compute growth from `low` to `high` input resolution, `(high / low)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlopsRatio {
    pub raw: f64,
    /// Floored to one decimal.
    pub printed: f64,
}

impl FlopsRatio {
    pub fn display(&self) -> String {
        format!("+{:.1}x", self.printed)
    }
}

pub fn flops_ratio(res_low: u32, res_high: u32) -> Result<FlopsRatio> {
    if res_low == 0 || res_high < res_low {
        return Err(AnalysisError::InvalidResolution {
            low: res_low,
            high: res_high,
        });
    }
    let raw = (f64::from(res_high) / f64::from(res_low)).powi(2);
    // Integer arithmetic keeps exact tenths (2.25 -> 2.2, not 2.3).
    let tenths = u64::from(res_high).pow(2) * 10 / u64::from(res_low).pow(2);
    Ok(FlopsRatio {
        raw,
        printed: tenths as f64 / 10.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionPair {
    pub low: ModelCard,
    pub low_recall: f64,
    pub high: ModelCard,
    pub high_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolutionWallRow {
    pub backbone: String,
    pub low_px: u32,
    pub high_px: u32,
    pub accuracy: DeltaReport,
    pub compute: FlopsRatio,
}

/// Relative accuracy change and compute growth for each low/high resolution
/// pair of the same backbone.
pub fn resolution_wall(pairs: &[ResolutionPair]) -> Result<Vec<ResolutionWallRow>> {
    pairs
        .iter()
        .map(|p| {
            if p.low.backbone != p.high.backbone {
                return Err(AnalysisError::BackboneMismatch {
                    low: p.low.backbone.clone(),
                    high: p.high.backbone.clone(),
                });
            }
            Ok(ResolutionWallRow {
                backbone: p.low.backbone.clone(),
                low_px: p.low.resolution_px,
                high_px: p.high.resolution_px,
                accuracy: DeltaReport::new(
                    format!(
                        "{} {}px -> {}px",
                        p.low.backbone, p.low.resolution_px, p.high.resolution_px
                    ),
                    p.low_recall,
                    p.high_recall,
                    DeltaKind::RelativePercent,
                )?,
                compute: flops_ratio(p.low.resolution_px, p.high.resolution_px)?,
            })
        })
        .collect()
}
