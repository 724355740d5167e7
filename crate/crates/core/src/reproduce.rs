//! Rebuilds the published comparison tables from a [`ResultsTable`] and
//! checks every derived cell against the printed value.
//!
//! The reference CSV only carries transcribed Recall columns and model
//! metadata. Everything derived (deltas, densities, tiers, leaders) is
//! recomputed here and compared with [`published`] at the tolerances in
//! [`tolerance`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{
    absolute_gain_points, leaderboard, relative_change_percent, resolution_wall,
    Grouping, Metric, ResolutionPair, ResultRow, ResultsTable,
};
use crate::efficiency::{
    classify_tier, format_params, linear_density, quadratic_density, semantic_power_density,
    EfficiencyRecord, SizeClass, Tier,
};
use crate::metrics::{discriminative_gap, EvalReport};
use crate::report::{csv_string, markdown_table};

/// The shipped reference results.
pub const REFERENCE_CSV: &str = include_str!("../data/reference_results.csv");

pub fn bundled_reference() -> ResultsTable {
    ResultsTable::from_csv_reader(REFERENCE_CSV.as_bytes()).expect("bundled reference CSV is valid")
}

pub mod tolerance {
    /// M1, M2 and phi (printed with 2 decimals).
    pub const DENSITY: f64 = 0.02;
    /// Recall@5 - Recall@1.
    pub const GAP: f64 = 0.001;
    /// Relative deltas, in percent.
    pub const RELATIVE_PERCENT: f64 = 0.2;
    /// Absolute gains, in percentage points.
    pub const ABSOLUTE_POINTS: f64 = 0.15;
    /// Slack for binary floating-point representation of printed decimals.
    pub const FLOAT_SLACK: f64 = 1e-9;
}

/// Values as printed in the published tables. Model names refer to rows of
/// the reference CSV.
pub mod published {
    use crate::efficiency::{SizeClass, Tier};

    pub struct ResolutionWall {
        pub architecture: &'static str,
        pub low: &'static str,
        pub high: &'static str,
        pub delta_percent: f64,
        pub flops: f64,
    }

    pub const RESOLUTION_WALL: [ResolutionWall; 3] = [
        ResolutionWall {
            architecture: "ViT-L-16-SigLIP2",
            low: "ViT-L-16-SigLIP2-384",
            high: "ViT-L-16-SigLIP2-512",
            delta_percent: -0.1,
            flops: 1.7,
        },
        ResolutionWall {
            architecture: "ViTamin-XL",
            low: "ViTamin-XL-256",
            high: "ViTamin-XL-384",
            delta_percent: -2.5,
            flops: 2.2,
        },
        ResolutionWall {
            architecture: "ViT-L-14",
            low: "ViT-L-14",
            high: "ViT-L-14-336",
            delta_percent: -1.2,
            flops: 2.2,
        },
    ];

    pub struct SizeLeader {
        pub class: SizeClass,
        pub name: &'static str,
        pub recall1: f64,
    }

    pub const SIZE_LEADERS: [SizeLeader; 4] = [
        SizeLeader {
            class: SizeClass::Small,
            name: "MobileCLIP-B",
            recall1: 0.653,
        },
        SizeLeader {
            class: SizeClass::Medium,
            name: "ConvNeXt-Large-d-320",
            recall1: 0.645,
        },
        SizeLeader {
            class: SizeClass::Large,
            name: "PE-Core-L-14-336",
            recall1: 0.758,
        },
        SizeLeader {
            class: SizeClass::VeryLarge,
            name: "ViT-gopt-16-SigLIP2-384",
            recall1: 0.770,
        },
    ];

    /// Same backbone across web-scrape, raw-scale and filtered pre-training.
    pub struct DataGain {
        pub backbone: &'static str,
        pub web_scrape: &'static str,
        pub raw_scale: &'static str,
        pub filtered: &'static str,
        pub gain_points: f64,
    }

    pub const DATA_QUALITY_GAIN: [DataGain; 3] = [
        DataGain {
            backbone: "ViT-B-32",
            web_scrape: "ViT-B-32",
            raw_scale: "ViT-B-32/LAION-2B",
            filtered: "ViT-B-32/DataComp-XL",
            gain_points: 11.8,
        },
        DataGain {
            backbone: "ViT-B-16",
            web_scrape: "ViT-B-16",
            raw_scale: "ViT-B-16/LAION-2B",
            filtered: "ViT-B-16/DataComp-XL",
            gain_points: 16.6,
        },
        DataGain {
            backbone: "ViT-L-14",
            web_scrape: "ViT-L-14",
            raw_scale: "ViT-L-14/LAION-2B",
            filtered: "ViT-L-14/DataComp-XL",
            gain_points: 12.5,
        },
    ];

    pub struct NoisePenalty {
        pub backbone: &'static str,
        pub baseline: &'static str,
        pub noisy: &'static str,
        pub filtered: &'static str,
        pub penalty_percent: f64,
    }

    pub const NOISE_PENALTY: [NoisePenalty; 3] = [
        NoisePenalty {
            backbone: "ViT-B-32",
            baseline: "ViT-B-32",
            noisy: "ViT-B-32/CommonPool",
            filtered: "ViT-B-32/DataComp-XL",
            penalty_percent: -79.4,
        },
        NoisePenalty {
            backbone: "ViT-B-16",
            baseline: "ViT-B-16",
            noisy: "ViT-B-16/CommonPool",
            filtered: "ViT-B-16/DataComp-XL",
            penalty_percent: -39.7,
        },
        NoisePenalty {
            backbone: "ViT-L-14",
            baseline: "ViT-L-14",
            noisy: "ViT-L-14/CommonPool",
            filtered: "ViT-L-14/DataComp-XL",
            penalty_percent: 1.0,
        },
    ];

    pub struct ScaleCollapse {
        pub backbone: &'static str,
        pub large: &'static str,
        pub small: &'static str,
        pub collapse_percent: f64,
    }

    pub const SCALE_COLLAPSE: [ScaleCollapse; 5] = [
        ScaleCollapse {
            backbone: "ResNet50",
            large: "ResNet50",
            small: "ResNet50/YFCC-15M",
            collapse_percent: -95.5,
        },
        ScaleCollapse {
            backbone: "ResNet50-quickgelu",
            large: "ResNet50-quickgelu",
            small: "ResNet50-quickgelu/YFCC-15M",
            collapse_percent: -95.1,
        },
        ScaleCollapse {
            backbone: "ResNet101",
            large: "ResNet101",
            small: "ResNet101/YFCC-15M",
            collapse_percent: -93.8,
        },
        ScaleCollapse {
            backbone: "ResNet101-quickgelu",
            large: "ResNet101-quickgelu",
            small: "ResNet101-quickgelu/YFCC-15M",
            collapse_percent: -93.7,
        },
        ScaleCollapse {
            backbone: "ViT-B-32",
            large: "ViT-B-32",
            small: "ViT-B-32/CommonPool-S",
            collapse_percent: -97.5,
        },
    ];

    pub struct MetricComparison {
        pub name: &'static str,
        pub m1: f64,
        pub m2: f64,
        pub phi: f64,
    }

    pub const METRIC_COMPARISON: [MetricComparison; 5] = [
        MetricComparison {
            name: "ViTamin-S",
            m1: 0.70,
            m2: 0.30,
            phi: 0.93,
        },
        MetricComparison {
            name: "ResNet50",
            m1: 0.40,
            m2: 0.16,
            phi: 0.45,
        },
        MetricComparison {
            name: "MobileCLIP-B",
            m1: 0.44,
            m2: 0.28,
            phi: 2.37,
        },
        MetricComparison {
            name: "ViT-L-14",
            m1: 0.13,
            m2: 0.08,
            phi: 0.41,
        },
        MetricComparison {
            name: "PE-Core-L-14-336",
            m1: 0.11,
            m2: 0.09,
            phi: 1.46,
        },
    ];

    /// Leader under the linear metric (the misleading ordering).
    pub const M1_LEADER: &str = "ViTamin-S";
    /// Leader under semantic power density.
    pub const PHI_LEADER: &str = "MobileCLIP-B";

    pub struct FamilyMax {
        pub family: &'static str,
        pub checkpoints: u32,
        pub max_phi: f64,
        /// Checkpoint or backbone label as printed.
        pub backbone: &'static str,
        pub tier: Tier,
    }

    pub const FAMILY_TIERS: [FamilyMax; 14] = [
        FamilyMax { family: "MobileCLIP", checkpoints: 4, max_phi: 2.82, backbone: "MobileCLIP-S1", tier: Tier::Tier1 },
        FamilyMax { family: "ViT", checkpoints: 80, max_phi: 1.61, backbone: "ViT-B-16", tier: Tier::Tier2 },
        FamilyMax { family: "PE-Core", checkpoints: 5, max_phi: 1.46, backbone: "PE-Core-L-14-336", tier: Tier::Tier2 },
        FamilyMax { family: "ViT-CLIPA", checkpoints: 7, max_phi: 1.01, backbone: "ViT-L-14-CLIPA", tier: Tier::Tier2 },
        FamilyMax { family: "ViT-SigLIP", checkpoints: 11, max_phi: 0.99, backbone: "ViT-B-16-SigLIP", tier: Tier::Tier3 },
        FamilyMax { family: "ConvNeXt", checkpoints: 12, max_phi: 0.94, backbone: "ConvNeXt-Base-w", tier: Tier::Tier3 },
        FamilyMax { family: "ViTamin", checkpoints: 15, max_phi: 0.93, backbone: "ViTamin-S", tier: Tier::Tier3 },
        FamilyMax { family: "ViT-SigLIP2", checkpoints: 15, max_phi: 0.79, backbone: "ViT-SO400M-14-SigLIP2-378", tier: Tier::Tier3 },
        FamilyMax { family: "EVA", checkpoints: 7, max_phi: 0.64, backbone: "EVA02-L-14", tier: Tier::Tier3 },
        FamilyMax { family: "ResNet", checkpoints: 16, max_phi: 0.51, backbone: "ResNet101", tier: Tier::Tier3 },
        FamilyMax { family: "CoCa", checkpoints: 4, max_phi: 0.42, backbone: "CoCa-ViT-L-14", tier: Tier::Tier4 },
        FamilyMax { family: "Roberta-ViT", checkpoints: 3, max_phi: 0.32, backbone: "RoBERTa-ViT-B-32", tier: Tier::Tier4 },
        FamilyMax { family: "ViT-Worldwide", checkpoints: 5, max_phi: 0.22, backbone: "ViT-H-14", tier: Tier::Tier4 },
        FamilyMax { family: "NLLB-CLIP", checkpoints: 6, max_phi: 0.06, backbone: "NLLB-Large-SigLIP", tier: Tier::Tier4 },
    ];

    pub struct Gap {
        pub name: &'static str,
        pub delta: f64,
    }

    pub const DISCRIMINATIVE_GAP: [Gap; 5] = [
        Gap { name: "ViT-gopt-16-SigLIP2-384", delta: 0.175 },
        Gap { name: "ViT-gopt-16-SigLIP2-256", delta: 0.182 },
        Gap { name: "PE-Core-L-14-336", delta: 0.179 },
        Gap { name: "PE-Core-bigG-14-448", delta: 0.208 },
        Gap { name: "EVA02-E-14", delta: 0.207 },
    ];

    pub const OVERALL_LEADER: (&str, f64) = ("ViT-gopt-16-SigLIP2-384", 0.770);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Missing,
}

impl Verdict {
    pub fn symbol(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Missing => "MISSING",
        }
    }
}

/// One computed-vs-published comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellCheck {
    pub row: String,
    pub column: String,
    pub computed: String,
    pub published: String,
    /// Unrounded computed value, for numeric checks.
    pub value: Option<f64>,
    pub abs_diff: Option<f64>,
    /// `None` means exact match of the printed form.
    pub tolerance: Option<f64>,
    pub verdict: Verdict,
}

impl CellCheck {
    fn numeric(row: &str, column: &str, computed: f64, published: f64, tol: f64, decimals: usize) -> Self {
        let diff = (computed - published).abs();
        Self {
            row: row.into(),
            column: column.into(),
            computed: format!("{computed:.decimals$}"),
            published: format!("{published:.decimals$}"),
            value: Some(computed),
            abs_diff: Some(diff),
            tolerance: Some(tol),
            verdict: if diff <= tol + tolerance::FLOAT_SLACK {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        }
    }

    fn label(row: &str, column: &str, computed: &str, published: &str) -> Self {
        Self {
            row: row.into(),
            column: column.into(),
            computed: computed.into(),
            published: published.into(),
            value: None,
            abs_diff: None,
            tolerance: None,
            verdict: if computed == published {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
        }
    }

    fn missing(row: &str, column: &str, published: String) -> Self {
        Self {
            row: row.into(),
            column: column.into(),
            computed: String::new(),
            published,
            value: None,
            abs_diff: None,
            tolerance: None,
            verdict: Verdict::Missing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableReport {
    pub slug: String,
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub checks: Vec<CellCheck>,
}

impl TableReport {
    fn new(slug: &str, title: &str, header: &[&str]) -> Self {
        Self {
            slug: slug.into(),
            title: title.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn check(&self, row: &str, column: &str) -> Option<&CellCheck> {
        self.checks.iter().find(|c| c.row == row && c.column == column)
    }

    pub fn count(&self, verdict: Verdict) -> usize {
        self.checks.iter().filter(|c| c.verdict == verdict).count()
    }

    pub fn to_markdown(&self) -> String {
        let mut md = format!("## {}\n\n", self.title);
        md.push_str(&markdown_table(&self.header, &self.rows));
        if !self.checks.is_empty() {
            md.push_str("\n### Checks against published values\n\n");
            md.push_str(&markdown_table(&check_header(), &check_rows(&self.checks)));
        }
        md
    }

    pub fn to_csv(&self) -> String {
        csv_string(&self.header, &self.rows)
    }
}

fn check_header() -> Vec<String> {
    ["Row", "Column", "Computed", "Published", "|diff|", "Tolerance", "Verdict"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn check_rows(checks: &[CellCheck]) -> Vec<Vec<String>> {
    checks
        .iter()
        .map(|c| {
            vec![
                c.row.clone(),
                c.column.clone(),
                c.computed.clone(),
                c.published.clone(),
                c.abs_diff.map(|d| format!("{d:.4}")).unwrap_or_else(|| "-".into()),
                c.tolerance
                    .map(|t| format!("±{t}"))
                    .unwrap_or_else(|| "exact".into()),
                c.verdict.symbol().into(),
            ]
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReproductionBundle {
    pub tables: Vec<TableReport>,
    pub warnings: Vec<String>,
}

impl ReproductionBundle {
    pub fn table(&self, slug: &str) -> Option<&TableReport> {
        self.tables.iter().find(|t| t.slug == slug)
    }

    pub fn count(&self, verdict: Verdict) -> usize {
        self.tables.iter().map(|t| t.count(verdict)).sum()
    }

    pub fn summary_markdown(&self) -> String {
        let mut md = String::from("# Reproduction summary\n\n");
        if self.tables.is_empty() {
            md.push_str("No tables reproduced.\n");
        } else {
            let header: Vec<String> = ["Table", "Checks", "Pass", "Fail", "Missing"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let rows: Vec<Vec<String>> = self
                .tables
                .iter()
                .map(|t| {
                    vec![
                        t.title.clone(),
                        t.checks.len().to_string(),
                        t.count(Verdict::Pass).to_string(),
                        t.count(Verdict::Fail).to_string(),
                        t.count(Verdict::Missing).to_string(),
                    ]
                })
                .collect();
            md.push_str(&markdown_table(&header, &rows));
            let _ = writeln!(
                md,
                "\nTotal: {} pass, {} fail, {} missing.",
                self.count(Verdict::Pass),
                self.count(Verdict::Fail),
                self.count(Verdict::Missing)
            );
            for t in &self.tables {
                if t.checks.is_empty() {
                    continue;
                }
                let _ = writeln!(md, "\n## {}\n", t.title);
                md.push_str(&markdown_table(&check_header(), &check_rows(&t.checks)));
            }
        }
        if !self.warnings.is_empty() {
            md.push_str("\n## Warnings\n\n");
            for w in &self.warnings {
                let _ = writeln!(md, "- {w}");
            }
        }
        md
    }

    /// Writes `<slug>.{md,json,csv}` per table plus `summary.{md,json}`.
    /// Output is a pure function of the bundle.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, contents: String| -> std::io::Result<()> {
            let path = dir.join(name);
            fs::write(&path, contents)?;
            written.push(path);
            Ok(())
        };
        for t in &self.tables {
            put(format!("{}.md", t.slug), t.to_markdown())?;
            put(format!("{}.csv", t.slug), t.to_csv())?;
            put(
                format!("{}.json", t.slug),
                serde_json::to_string_pretty(t).expect("serializable") + "\n",
            )?;
        }
        put("summary.md".into(), self.summary_markdown())?;
        put(
            "summary.json".into(),
            serde_json::to_string_pretty(self).expect("serializable") + "\n",
        )?;
        Ok(written)
    }
}

fn r3(v: f64) -> String {
    format!("{v:.3}")
}

fn opt3(v: Option<f64>) -> String {
    v.map(r3).unwrap_or_else(|| "-".into())
}

struct Ctx<'a> {
    table: &'a ResultsTable,
    warnings: Vec<String>,
}

impl Ctx<'_> {
    fn row(&mut self, name: &str, section: &str) -> Option<&ResultRow> {
        let found = self.table.get(name);
        if found.is_none() {
            self.warnings.push(format!("{section}: reference row {name} is missing"));
        }
        found
    }

    fn recall1(&mut self, name: &str, section: &str) -> Option<f64> {
        let r = self.row(name, section)?.recall(1);
        if r.is_none() {
            self.warnings.push(format!("{section}: {name} has no Recall@1"));
        }
        r
    }
}

fn resolution_wall_table(ctx: &mut Ctx) -> TableReport {
    let mut t = TableReport::new(
        "resolution_wall",
        "Resolution wall",
        &["Architecture", "Low res. (Recall@1)", "High res. (Recall@1)", "Delta (Accuracy)", "Compute cost (FLOPs)"],
    );
    for p in &published::RESOLUTION_WALL {
        let (low, high) = match (ctx.row(p.low, &t.title).cloned(), ctx.row(p.high, &t.title).cloned()) {
            (Some(l), Some(h)) => (l, h),
            _ => {
                t.checks.push(CellCheck::missing(p.architecture, "Delta", format!("{:+.1}%", p.delta_percent)));
                continue;
            }
        };
        let (Some(lr), Some(hr)) = (low.recall(1), high.recall(1)) else {
            ctx.warnings.push(format!("{}: {} lacks Recall@1", t.title, p.architecture));
            t.checks.push(CellCheck::missing(p.architecture, "Delta", format!("{:+.1}%", p.delta_percent)));
            continue;
        };
        let pair = ResolutionPair {
            low: low.model.clone(),
            low_recall: lr,
            high: high.model.clone(),
            high_recall: hr,
        };
        match resolution_wall(std::slice::from_ref(&pair)) {
            Ok(rows) => {
                let w = &rows[0];
                t.rows.push(vec![
                    p.architecture.into(),
                    format!("{} ({}px)", r3(lr), w.low_px),
                    format!("{} ({}px)", r3(hr), w.high_px),
                    w.accuracy.display(),
                    w.compute.display(),
                ]);
                t.checks.push(CellCheck::numeric(
                    p.architecture,
                    "Delta (%)",
                    w.accuracy.delta,
                    p.delta_percent,
                    tolerance::RELATIVE_PERCENT,
                    1,
                ));
                t.checks.push(CellCheck::label(
                    p.architecture,
                    "Compute cost",
                    &format!("{:.1}", w.compute.printed),
                    &format!("{:.1}", p.flops),
                ));
            }
            Err(e) => ctx.warnings.push(format!("{}: {e}", t.title)),
        }
    }
    t
}

fn size_leaders_table(ctx: &mut Ctx) -> TableReport {
    let mut t = TableReport::new(
        "size_leaders",
        "Size class leaders",
        &["Size family", "Checkpoint", "PT data", "Size", "Recall@1"],
    );
    let with_r1 = ctx.table.filter(|r| r.recall(1).is_some());
    let lb = match leaderboard(&with_r1, Metric::Recall(1), Some(Grouping::SizeClass)) {
        Ok(lb) => lb,
        Err(e) => {
            ctx.warnings.push(format!("{}: {e}", t.title));
            return t;
        }
    };
    for p in &published::SIZE_LEADERS {
        let leader = lb.group(&p.class.to_string()).and_then(|g| g.leader());
        match leader {
            Some(e) => {
                t.rows.push(vec![
                    p.class.label().into(),
                    e.name.clone(),
                    e.pretrain_dataset.clone(),
                    format!("{}M", format_params(e.params_millions)),
                    r3(e.value),
                ]);
                t.checks.push(CellCheck::label(p.class.label(), "Checkpoint", &e.name, p.name));
                t.checks.push(CellCheck::numeric(p.class.label(), "Recall@1", e.value, p.recall1, 0.0, 3));
            }
            None => t.checks.push(CellCheck::missing(p.class.label(), "Checkpoint", p.name.into())),
        }
    }
    t
}

fn data_quality_table(ctx: &mut Ctx) -> TableReport {
    let mut t = TableReport::new(
        "data_quality_gain",
        "Data quality gain",
        &["Backbone (size)", "WIT-400M", "LAION-2B", "DataComp-XL", "Curated gain (points vs WIT-400M)"],
    );
    for p in &published::DATA_QUALITY_GAIN {
        let section = t.title.clone();
        let web = ctx.recall1(p.web_scrape, &section);
        let raw = ctx.row(p.raw_scale, &section).and_then(|r| r.recall(1));
        let filtered = ctx.recall1(p.filtered, &section);
        let size = ctx
            .table
            .get(p.web_scrape)
            .map(|r| format!("{} ({}M)", p.backbone, format_params(r.model.params_millions)))
            .unwrap_or_else(|| p.backbone.to_string());
        match (web, filtered) {
            (Some(w), Some(f)) => {
                let gain = absolute_gain_points(w, f);
                t.rows.push(vec![size, r3(w), opt3(raw), r3(f), format!("{gain:+.1}")]);
                t.checks.push(CellCheck::numeric(
                    p.backbone,
                    "Curated gain",
                    gain,
                    p.gain_points,
                    tolerance::ABSOLUTE_POINTS,
                    1,
                ));
            }
            _ => t.checks.push(CellCheck::missing(p.backbone, "Curated gain", format!("{:+.1}", p.gain_points))),
        }
    }
    t
}

fn noise_penalty_table(ctx: &mut Ctx) -> TableReport {
    let mut t = TableReport::new(
        "noise_penalty",
        "Noise penalty",
        &["Backbone (size)", "WIT-400M", "CommonPool", "DataComp-XL", "Noise penalty (CommonPool vs WIT-400M)"],
    );
    for p in &published::NOISE_PENALTY {
        let section = t.title.clone();
        let base = ctx.recall1(p.baseline, &section);
        let noisy = ctx.recall1(p.noisy, &section);
        let filtered = ctx.row(p.filtered, &section).and_then(|r| r.recall(1));
        let size = ctx
            .table
            .get(p.baseline)
            .map(|r| format!("{} ({}M)", p.backbone, format_params(r.model.params_millions)))
            .unwrap_or_else(|| p.backbone.to_string());
        match (base, noisy) {
            (Some(b), Some(n)) => match relative_change_percent(b, n) {
                Ok(pen) => {
                    t.rows.push(vec![size, r3(b), r3(n), opt3(filtered), format!("{pen:+.1}%")]);
                    t.checks.push(CellCheck::numeric(
                        p.backbone,
                        "Noise penalty (%)",
                        pen,
                        p.penalty_percent,
                        tolerance::RELATIVE_PERCENT,
                        1,
                    ));
                }
                Err(e) => ctx.warnings.push(format!("{section}: {}: {e}", p.backbone)),
            },
            _ => t.checks.push(CellCheck::missing(p.backbone, "Noise penalty (%)", format!("{:+.1}%", p.penalty_percent))),
        }
    }
    t
}

fn scale_collapse_table(ctx: &mut Ctx) -> TableReport {
    let mut t = TableReport::new(
        "scale_collapse",
        "Scale collapse",
        &["Backbone", "Large-scale PT data", "Small-scale PT data", "Recall@1 (Large)", "Recall@1 (Small)", "Collapse ratio"],
    );
    for p in &published::SCALE_COLLAPSE {
        let section = t.title.clone();
        let large = ctx.row(p.large, &section).cloned();
        let small = ctx.row(p.small, &section).cloned();
        let (Some(large), Some(small)) = (large, small) else {
            t.checks.push(CellCheck::missing(p.backbone, "Collapse ratio (%)", format!("{:+.1}%", p.collapse_percent)));
            continue;
        };
        let (Some(lr), Some(sr)) = (large.recall(1), small.recall(1)) else {
            t.checks.push(CellCheck::missing(p.backbone, "Collapse ratio (%)", format!("{:+.1}%", p.collapse_percent)));
            continue;
        };
        match relative_change_percent(lr, sr) {
            Ok(ratio) => {
                t.rows.push(vec![
                    p.backbone.into(),
                    large.model.pretrain_dataset.clone(),
                    small.model.pretrain_dataset.clone(),
                    r3(lr),
                    r3(sr),
                    format!("{ratio:+.1}%"),
                ]);
                t.checks.push(CellCheck::numeric(
                    p.backbone,
                    "Collapse ratio (%)",
                    ratio,
                    p.collapse_percent,
                    tolerance::RELATIVE_PERCENT,
                    1,
                ));
            }
            Err(e) => ctx.warnings.push(format!("{section}: {}: {e}", p.backbone)),
        }
    }
    t
}

fn metric_comparison_table(ctx: &mut Ctx) -> TableReport {
    let mut t = TableReport::new(
        "metric_comparison",
        "Efficiency metric comparison",
        &["Model", "Size (M)", "Recall@1", "M1 (R@1/N)", "M2 (R@1^2/N)", "phi (SNR^2/N)"],
    );
    let mut records = Vec::new();
    for p in &published::METRIC_COMPARISON {
        let section = t.title.clone();
        let Some(row) = ctx.row(p.name, &section).cloned() else {
            t.checks.push(CellCheck::missing(p.name, "phi", format!("{:.2}", p.phi)));
            continue;
        };
        let Some(r1) = row.recall(1) else {
            t.checks.push(CellCheck::missing(p.name, "phi", format!("{:.2}", p.phi)));
            continue;
        };
        match EfficiencyRecord::new(row.model.clone(), r1) {
            Ok(rec) => {
                t.rows.push(vec![
                    rec.model.name.clone(),
                    format_params(rec.model.params_millions),
                    r3(rec.recall1),
                    format!("{:.2}", rec.m1),
                    format!("{:.2}", rec.m2),
                    format!("{:.2}", rec.phi),
                ]);
                for (col, computed, printed) in [("M1", rec.m1, p.m1), ("M2", rec.m2, p.m2), ("phi", rec.phi, p.phi)] {
                    t.checks.push(CellCheck::numeric(p.name, col, computed, printed, tolerance::DENSITY, 2));
                }
                records.push(rec);
            }
            Err(e) => ctx.warnings.push(format!("{section}: {}: {e}", p.name)),
        }
    }
    if !records.is_empty() {
        let leader = |f: fn(&EfficiencyRecord) -> f64| -> String {
            records
                .iter()
                .max_by(|a, b| f(a).total_cmp(&f(b)).then_with(|| b.model.name.cmp(&a.model.name)))
                .map(|r| r.model.name.clone())
                .unwrap_or_default()
        };
        let (m1, m2, phi) = (leader(|r| r.m1), leader(|r| r.m2), leader(|r| r.phi));
        t.rows.push(vec!["Leader".into(), String::new(), String::new(), m1.clone(), m2, phi.clone()]);
        t.checks.push(CellCheck::label("Leader", "M1", &m1, published::M1_LEADER));
        t.checks.push(CellCheck::label("Leader", "phi", &phi, published::PHI_LEADER));
    }
    t
}

fn family_tiers_table(ctx: &mut Ctx) -> TableReport {
    let mut t = TableReport::new(
        "family_tiers",
        "Efficiency tiers by family",
        &["Tier", "Family", "Rows", "Max phi", "Backbone", "PT data", "Recall@5", "Recall@1"],
    );
    for p in &published::FAMILY_TIERS {
        // Tier assignment of the printed value itself.
        let printed_tier = classify_tier(p.max_phi);
        t.checks.push(CellCheck::label(
            p.family,
            "Tier (printed phi)",
            &format!("{printed_tier:?}"),
            &format!("{:?}", p.tier),
        ));

        let members: Vec<&ResultRow> = ctx
            .table
            .rows()
            .iter()
            .filter(|r| r.model.family == p.family && r.recall(1).is_some())
            .collect();
        let best = members
            .iter()
            .filter_map(|r| {
                semantic_power_density(r.recall(1)?, r.model.params_millions)
                    .ok()
                    .map(|phi| (phi, *r))
            })
            .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.model.name.cmp(&a.1.model.name)));
        let Some((phi, row)) = best else {
            ctx.warnings.push(format!("{}: no reference rows for family {}", t.title, p.family));
            t.checks.push(CellCheck::missing(p.family, "Max phi", format!("{:.2}", p.max_phi)));
            continue;
        };
        let tier = classify_tier(phi);
        t.rows.push(vec![
            tier_short(tier).into(),
            p.family.into(),
            members.len().to_string(),
            format!("{phi:.2}"),
            row.model.name.clone(),
            row.model.pretrain_dataset.clone(),
            opt3(row.recall(5)),
            opt3(row.recall(1)),
        ]);
        t.checks.push(CellCheck::numeric(p.family, "Max phi", phi, p.max_phi, tolerance::DENSITY, 2));
        t.checks.push(CellCheck::label(p.family, "Tier", &format!("{tier:?}"), &format!("{:?}", p.tier)));
        let backbone = if row.model.name == p.backbone {
            &row.model.name
        } else {
            &row.model.backbone
        };
        t.checks.push(CellCheck::label(p.family, "Backbone", backbone, p.backbone));
    }
    t
}

fn tier_short(tier: Tier) -> &'static str {
    match tier {
        Tier::Tier1 => "Tier 1",
        Tier::Tier2 => "Tier 2",
        Tier::Tier3 => "Tier 3",
        Tier::Tier4 => "Tier 4",
    }
}

fn discriminative_gap_table(ctx: &mut Ctx) -> TableReport {
    let mut t = TableReport::new(
        "discriminative_gap",
        "Discriminative gap",
        &["Model checkpoint", "Size (B)", "Recall@5", "Recall@3", "Recall@1", "Delta"],
    );
    let candidates = ctx.table.filter(|r| r.recall(1).is_some() && r.recall(5).is_some());
    let lb = match leaderboard(&candidates, Metric::Recall(5), None) {
        Ok(lb) => lb,
        Err(e) => {
            ctx.warnings.push(format!("{}: {e}", t.title));
            return t;
        }
    };
    let top: Vec<String> = lb
        .groups
        .first()
        .map(|g| g.entries.iter().take(published::DISCRIMINATIVE_GAP.len()).map(|e| e.name.clone()).collect())
        .unwrap_or_default();
    for name in &top {
        let row = candidates.get(name).expect("leaderboard names come from the table");
        let report = EvalReport::from_recalls(row.model.clone(), row.recall_at.clone());
        let gap = discriminative_gap(&report).ok();
        t.rows.push(vec![
            name.clone(),
            format!("{:.2}", row.model.params_millions / 1000.0),
            opt3(row.recall(5)),
            opt3(row.recall(3)),
            opt3(row.recall(1)),
            opt3(gap),
        ]);
    }
    for p in &published::DISCRIMINATIVE_GAP {
        let gap = candidates
            .get(p.name)
            .and_then(|row| discriminative_gap(&EvalReport::from_recalls(row.model.clone(), row.recall_at.clone())).ok());
        match gap {
            Some(g) => t.checks.push(CellCheck::numeric(p.name, "Delta", g, p.delta, tolerance::GAP, 3)),
            None => {
                ctx.warnings.push(format!("{}: {} lacks Recall@1 or Recall@5", t.title, p.name));
                t.checks.push(CellCheck::missing(p.name, "Delta", format!("{:.3}", p.delta)));
            }
        }
        t.checks.push(CellCheck::label(
            p.name,
            "In top 5 by Recall@5",
            if top.iter().any(|n| n == p.name) { "yes" } else { "no" },
            "yes",
        ));
    }
    t
}

fn recall_leaderboard_table(ctx: &mut Ctx) -> TableReport {
    let mut t = TableReport::new(
        "leaderboard_recall1",
        "Recall@1 leaderboard",
        &["Rank", "Checkpoint", "Size (M)", "PT data", "Recall@1", "phi", "Size class"],
    );
    let with_r1 = ctx.table.filter(|r| r.recall(1).is_some());
    let Ok(lb) = leaderboard(&with_r1, Metric::Recall(1), None) else {
        return t;
    };
    let Some(group) = lb.groups.first() else {
        return t;
    };
    for (i, e) in group.entries.iter().enumerate() {
        let phi = semantic_power_density(e.value, e.params_millions).unwrap_or(f64::NAN);
        t.rows.push(vec![
            (i + 1).to_string(),
            e.name.clone(),
            format_params(e.params_millions),
            e.pretrain_dataset.clone(),
            r3(e.value),
            format!("{phi:.2}"),
            crate::efficiency::classify_size(e.params_millions).to_string(),
        ]);
    }
    if let Some(first) = group.leader() {
        let (name, r1) = published::OVERALL_LEADER;
        t.checks.push(CellCheck::label("1", "Checkpoint", &first.name, name));
        t.checks.push(CellCheck::numeric("1", "Recall@1", first.value, r1, 0.0, 3));
    }
    t
}

fn phi_leaderboard_table(ctx: &mut Ctx) -> TableReport {
    let mut t = TableReport::new(
        "leaderboard_phi",
        "Semantic power density leaderboard",
        &["Rank", "Checkpoint", "Family", "Size (M)", "Recall@1", "M1", "M2", "phi", "Tier"],
    );
    let with_r1 = ctx.table.filter(|r| r.recall(1).is_some());
    let Ok(lb) = leaderboard(&with_r1, Metric::Phi, None) else {
        return t;
    };
    for group in &lb.groups {
        for (i, e) in group.entries.iter().enumerate() {
            let r1 = with_r1.get(&e.name).and_then(|r| r.recall(1)).unwrap_or(0.0);
            t.rows.push(vec![
                (i + 1).to_string(),
                e.name.clone(),
                e.family.clone(),
                format_params(e.params_millions),
                r3(r1),
                format!("{:.2}", linear_density(r1, e.params_millions).unwrap_or(f64::NAN)),
                format!("{:.2}", quadratic_density(r1, e.params_millions).unwrap_or(f64::NAN)),
                format!("{:.2}", e.value),
                tier_short(classify_tier(e.value)).into(),
            ]);
        }
    }
    t
}

/// Rebuilds every table. Missing reference rows become warnings and
/// `Missing` checks; the run always completes.
pub fn reproduce(table: &ResultsTable) -> ReproductionBundle {
    if table.is_empty() {
        return ReproductionBundle {
            tables: Vec::new(),
            warnings: vec!["reference table is empty; nothing to reproduce".into()],
        };
    }
    let mut ctx = Ctx {
        table,
        warnings: Vec::new(),
    };
    let tables = vec![
        recall_leaderboard_table(&mut ctx),
        resolution_wall_table(&mut ctx),
        size_leaders_table(&mut ctx),
        data_quality_table(&mut ctx),
        noise_penalty_table(&mut ctx),
        scale_collapse_table(&mut ctx),
        metric_comparison_table(&mut ctx),
        family_tiers_table(&mut ctx),
        discriminative_gap_table(&mut ctx),
        phi_leaderboard_table(&mut ctx),
    ];
    ReproductionBundle {
        tables,
        warnings: ctx.warnings,
    }
}

/// Recall@1 leader of every populated size class.
pub fn size_class_leaders(table: &ResultsTable) -> Vec<(SizeClass, String, f64)> {
    let with_r1 = table.filter(|r| r.recall(1).is_some());
    let Ok(lb) = leaderboard(&with_r1, Metric::Recall(1), Some(Grouping::SizeClass)) else {
        return Vec::new();
    };
    [SizeClass::Small, SizeClass::Medium, SizeClass::Large, SizeClass::VeryLarge]
        .into_iter()
        .filter_map(|c| {
            let e = lb.group(&c.to_string())?.leader()?;
            Some((c, e.name.clone(), e.value))
        })
        .collect()
}
