//! Accuracy-per-parameter metrics and the tier / size-class taxonomies.
//!
//! All three densities are scaled by 100 and take the parameter count in
//! millions:
//!
//! * linear    `M1  = R@1 / N * 100`
//! * quadratic `M2  = R@1^2 / N * 100`
//! * semantic power density `phi = (R@1 / (1 - R@1 + eps))^2 / N * 100`
//!
//! `phi` squares the retrieval odds ratio, so a model at 50% Recall@1 scores
//! exactly `100 / N` and anything below that is penalized quadratically.

use serde::Serialize;
use thiserror::Error;

use crate::store::ModelCard;

/// Keeps `phi` finite at Recall@1 = 1.
pub const ODDS_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum EfficiencyError {
    #[error("recall must lie in [0, 1], got {0}")]
    InvalidRecall(f64),
    #[error("parameter count must be positive, got {0}")]
    InvalidParams(f64),
}

pub type Result<T> = std::result::Result<T, EfficiencyError>;

fn check(recall1: f64, params_millions: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&recall1) {
        return Err(EfficiencyError::InvalidRecall(recall1));
    }
    if !(params_millions.is_finite() && params_millions > 0.0) {
        return Err(EfficiencyError::InvalidParams(params_millions));
    }
    Ok(())
}

/// Retrieval odds ratio `R@1 / (1 - R@1 + eps)`.
pub fn odds_ratio(recall1: f64) -> f64 {
    recall1 / (1.0 - recall1 + ODDS_EPSILON)
}

pub fn semantic_power_density(recall1: f64, params_millions: f64) -> Result<f64> {
    check(recall1, params_millions)?;
    let odds = odds_ratio(recall1);
    Ok(odds * odds / params_millions * 100.0)
}

pub fn linear_density(recall1: f64, params_millions: f64) -> Result<f64> {
    check(recall1, params_millions)?;
    Ok(recall1 / params_millions * 100.0)
}

pub fn quadratic_density(recall1: f64, params_millions: f64) -> Result<f64> {
    check(recall1, params_millions)?;
    Ok(recall1 * recall1 / params_millions * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Tier {
    /// phi > 2.0
    Tier1,
    /// 1.0 <= phi < 2.0 (phi == 2.0 lands here)
    Tier2,
    /// 0.5 <= phi < 1.0
    Tier3,
    /// phi < 0.5
    Tier4,
}

impl Tier {
    pub fn label(self) -> &'static str {
        match self {
            Tier::Tier1 => "Tier 1: Hyper-efficient (phi > 2.0)",
            Tier::Tier2 => "Tier 2: High utility (1.0 <= phi < 2.0)",
            Tier::Tier3 => "Tier 3: Moderate density (0.5 <= phi < 1.0)",
            Tier::Tier4 => "Tier 4: Low density or diminishing returns (phi < 0.5)",
        }
    }
}

pub fn classify_tier(phi: f64) -> Tier {
    if phi > 2.0 {
        Tier::Tier1
    } else if phi >= 1.0 {
        Tier::Tier2
    } else if phi >= 0.5 {
        Tier::Tier3
    } else {
        Tier::Tier4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum SizeClass {
    /// < 200M
    Small,
    /// 200M to < 400M
    Medium,
    /// 400M to 1000M
    Large,
    /// > 1000M
    VeryLarge,
}

impl SizeClass {
    pub fn label(self) -> &'static str {
        match self {
            SizeClass::Small => "Small (<200M)",
            SizeClass::Medium => "Medium (200-400M)",
            SizeClass::Large => "Large (400M-1B)",
            SizeClass::VeryLarge => "Very Large (>1B)",
        }
    }
}

impl std::fmt::Display for SizeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SizeClass::Small => "Small",
            SizeClass::Medium => "Medium",
            SizeClass::Large => "Large",
            SizeClass::VeryLarge => "VeryLarge",
        })
    }
}

/// Boundaries 200 and 400 belong to the upper class; 1000 stays Large.
pub fn classify_size(params_millions: f64) -> SizeClass {
    if params_millions < 200.0 {
        SizeClass::Small
    } else if params_millions < 400.0 {
        SizeClass::Medium
    } else if params_millions <= 1000.0 {
        SizeClass::Large
    } else {
        SizeClass::VeryLarge
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyRecord {
    pub model: ModelCard,
    pub recall1: f64,
    pub phi: f64,
    pub m1: f64,
    pub m2: f64,
    pub tier: Tier,
    pub size_class: SizeClass,
}

impl EfficiencyRecord {
    pub fn new(model: ModelCard, recall1: f64) -> Result<Self> {
        let n = model.params_millions;
        let phi = semantic_power_density(recall1, n)?;
        Ok(Self {
            recall1,
            phi,
            m1: linear_density(recall1, n)?,
            m2: quadratic_density(recall1, n)?,
            tier: classify_tier(phi),
            size_class: classify_size(n),
            model,
        })
    }

    pub const CSV_HEADER: &'static str = "Model,Size,Recall@1,M1,M2,φ";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.3},{:.2},{:.2},{:.2}",
            self.model.name,
            format_params(self.model.params_millions),
            self.recall1,
            self.m1,
            self.m2,
            self.phi
        )
    }
}

/// Parameter counts print without decimals when integral.
pub fn format_params(params_millions: f64) -> String {
    if params_millions.fract() == 0.0 {
        format!("{params_millions:.0}")
    } else {
        format!("{params_millions}")
    }
}
