use serde::Serialize;

use super::{Attribute, ProductMetadata, Vocabulary};

pub const REQUIRED_PREFIX: &str = "The product is";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptionAudit {
    pub sku_id: String,
    pub caption: String,
    pub token_count: usize,
    pub token_budget: usize,
    pub token_compliant: bool,
    pub prefix_ok: bool,
    pub retained_attributes: Vec<Attribute>,
    pub missing_attributes: Vec<Attribute>,
    pub pass: bool,
}

/// Lowercase, curly quotes folded, every non-alphanumeric run collapsed to a
/// single space, padded with spaces so word boundaries can be matched.
pub fn normalize_for_match(text: &str) -> String {
    let mut out = String::from(" ");
    for c in text.chars().flat_map(char::to_lowercase) {
        let c = match c {
            '\u{2018}' | '\u{2019}' | '\u{02bc}' => '\'',
            c => c,
        };
        if c.is_alphanumeric() {
            out.push(c);
        } else if !out.ends_with(' ') {
            out.push(' ');
        }
    }
    if !out.ends_with(' ') {
        out.push(' ');
    }
    out
}

pub fn audit_caption(caption: &str, metadata: &ProductMetadata, token_budget: usize, vocab: &Vocabulary) -> CaptionAudit {
    let token_count = vocab.count_tokens(caption);
    let token_compliant = token_count <= token_budget;
    let prefix_ok = caption.trim_start().starts_with(REQUIRED_PREFIX);
    let haystack = normalize_for_match(caption);
    let (retained, missing): (Vec<Attribute>, Vec<Attribute>) = metadata
        .attributes
        .iter()
        .filter(|a| normalize_for_match(&a.value).trim() != "")
        .cloned()
        .partition(|a| haystack.contains(&normalize_for_match(&a.value)));
    CaptionAudit {
        sku_id: metadata.sku_id.clone(),
        caption: caption.to_owned(),
        token_count,
        token_budget,
        token_compliant,
        prefix_ok,
        pass: token_compliant && prefix_ok && missing.is_empty(),
        retained_attributes: retained,
        missing_attributes: missing,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AuditSummary {
    pub total: usize,
    pub token_compliant: usize,
    pub prefix_ok: usize,
    pub attributes_retained: usize,
    pub passed: usize,
}

impl AuditSummary {
    fn rate(&self, n: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            n as f64 / self.total as f64
        }
    }

    pub fn compliance_rate(&self) -> f64 {
        self.rate(self.token_compliant)
    }

    pub fn prefix_rate(&self) -> f64 {
        self.rate(self.prefix_ok)
    }

    pub fn retention_rate(&self) -> f64 {
        self.rate(self.attributes_retained)
    }

    pub fn pass_rate(&self) -> f64 {
        self.rate(self.passed)
    }
}

impl std::fmt::Display for AuditSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "audited {}: token compliance {:.1}%, prefix {:.1}%, attribute retention {:.1}%, pass {:.1}%",
            self.total,
            self.compliance_rate() * 100.0,
            self.prefix_rate() * 100.0,
            self.retention_rate() * 100.0,
            self.pass_rate() * 100.0
        )
    }
}

pub fn summarize(audits: &[CaptionAudit]) -> AuditSummary {
    AuditSummary {
        total: audits.len(),
        token_compliant: audits.iter().filter(|a| a.token_compliant).count(),
        prefix_ok: audits.iter().filter(|a| a.prefix_ok).count(),
        attributes_retained: audits.iter().filter(|a| a.missing_attributes.is_empty()).count(),
        passed: audits.iter().filter(|a| a.pass).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::AttributeKind;
    use std::sync::OnceLock;

    const REFERENCE_CAPTION: &str = "The product is Hershey's Genuine Chocolate Syrup, a fat-free, 16 oz dark brown chocolate syrup in a bottle with a black cap.";

    fn vocab() -> &'static Vocabulary {
        static V: OnceLock<Vocabulary> = OnceLock::new();
        V.get_or_init(Vocabulary::bundled)
    }

    fn hershey() -> ProductMetadata {
        ProductMetadata::new(
            "hershey",
            "The image shows a bottle of Hershey's Syrup...",
            "brand: Hershey’s; size: 16 oz; color: dark brown",
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn reference_caption_passes() {
        let a = audit_caption(REFERENCE_CAPTION, &hershey(), 77, vocab());
        assert!(a.pass, "{a:?}");
        assert_eq!(a.token_count, 31);
        assert_eq!(a.retained_attributes.len(), 3);
    }

    #[test]
    fn missing_prefix_fails() {
        let a = audit_caption("A syrup bottle", &hershey(), 77, vocab());
        assert!(!a.prefix_ok);
        assert!(!a.pass);
    }

    #[test]
    fn over_budget_fails() {
        let caption = format!("The product is{}", " chocolate".repeat(100));
        let a = audit_caption(&caption, &hershey(), 77, vocab());
        assert_eq!(a.token_count, 105);
        assert!(!a.token_compliant);
        assert!(!a.pass);
    }

    #[test]
    fn retention_respects_word_boundaries() {
        let m = ProductMetadata::new("s", "d", "", vec![Attribute::new(AttributeKind::Color, "red")]).unwrap();
        let a = audit_caption("The product is a shredded cheese bag.", &m, 77, vocab());
        assert_eq!(a.missing_attributes.len(), 1);
        let a = audit_caption("The product is a RED bag.", &m, 77, vocab());
        assert!(a.pass);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_for_match("Hershey’s  16-oz!"), " hershey s 16 oz ");
        assert_eq!(normalize_for_match(""), " ");
    }

    #[test]
    fn summary_rates() {
        let ok = audit_caption(REFERENCE_CAPTION, &hershey(), 77, vocab());
        let bad = audit_caption("A syrup bottle", &hershey(), 77, vocab());
        let s = summarize(&[ok.clone(), bad]);
        assert_eq!(s.total, 2);
        assert_eq!(s.passed, 1);
        assert_eq!(s.prefix_rate(), 0.5);
        assert_eq!(summarize(&[ok]).to_string(), "audited 1: token compliance 100.0%, prefix 100.0%, attribute retention 100.0%, pass 100.0%");
        assert_eq!(summarize(&[]).pass_rate(), 0.0);
    }
}
