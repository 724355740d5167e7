//! Catalog caption refinement: prompt construction, a chat-completion
//! client, CLIP token counting and the automatic caption audit.

mod audit;
mod catalog;
mod client;
mod prompt;
mod tokenizer;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{audit_caption, normalize_for_match, summarize, AuditSummary, CaptionAudit, REQUIRED_PREFIX};
pub use catalog::{read_catalog, review_samples, write_audits, write_catalog, CatalogRecord};
pub use client::{extract_label, request_caption, request_captions, EndpointConfig};
pub use prompt::{build_prompt, CaptionJob, CONSTRAINT_LINES, DEFAULT_TOKEN_BUDGET, ROLE_LINE};
pub use tokenizer::{Vocabulary, BOUNDARY_TOKENS, CONTEXT_LENGTH, END_OF_TEXT, START_OF_TEXT};

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("empty metadata: {0}")]
    EmptyMetadata(String),
    #[error("token budget must be positive")]
    InvalidBudget,
    #[error("vocabulary unavailable: {0}")]
    VocabularyMissing(String),
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("response JSON has no \"label\" key")]
    MissingLabelKey,
    #[error("invalid endpoint configuration: {0}")]
    InvalidConfig(String),
    #[error("catalog {path}: {message}")]
    Catalog { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Brand,
    Color,
    Size,
    Form,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 4] = [Self::Brand, Self::Color, Self::Size, Self::Form];

    pub fn name(self) -> &'static str {
        match self {
            Self::Brand => "brand",
            Self::Color => "color",
            Self::Size => "size",
            Self::Form => "form",
        }
    }

    /// Maps a tag key onto an attribute kind.
    pub fn from_key(key: &str) -> Option<Self> {
        match key.trim().to_lowercase().as_str() {
            "brand" => Some(Self::Brand),
            "color" | "colour" => Some(Self::Color),
            "size" | "volume" | "weight" | "net weight" => Some(Self::Size),
            "form" | "packaging" | "package" | "container" => Some(Self::Form),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Attribute {
    pub kind: AttributeKind,
    pub value: String,
}

impl Attribute {
    pub fn new(kind: AttributeKind, value: impl Into<String>) -> Self {
        Self {
            kind,
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductMetadata {
    pub sku_id: String,
    pub raw_description: String,
    pub tag_description: String,
    pub attributes: Vec<Attribute>,
}

impl ProductMetadata {
    /// Attributes not given explicitly are parsed from `key: value` pairs in
    /// the tag description.
    pub fn new(
        sku_id: impl Into<String>,
        raw_description: impl Into<String>,
        tag_description: impl Into<String>,
        explicit: Vec<Attribute>,
    ) -> Result<Self, CaptionError> {
        let meta = Self {
            sku_id: sku_id.into(),
            raw_description: raw_description.into(),
            tag_description: tag_description.into(),
            attributes: Vec::new(),
        };
        meta.check()?;
        let mut attributes = explicit;
        for parsed in parse_tag_attributes(&meta.tag_description) {
            if !attributes.iter().any(|a| a.kind == parsed.kind) {
                attributes.push(parsed);
            }
        }
        attributes.retain(|a| !a.value.trim().is_empty());
        attributes.sort();
        attributes.dedup();
        Ok(Self { attributes, ..meta })
    }

    pub fn check(&self) -> Result<(), CaptionError> {
        if self.sku_id.trim().is_empty() {
            return Err(CaptionError::EmptyMetadata("sku_id is empty".into()));
        }
        if self.raw_description.trim().is_empty() {
            return Err(CaptionError::EmptyMetadata(format!("{}: raw_description is empty", self.sku_id)));
        }
        Ok(())
    }

    pub fn attribute(&self, kind: AttributeKind) -> Option<&str> {
        self.attributes.iter().find(|a| a.kind == kind).map(|a| a.value.as_str())
    }
}

/// `brand: Hershey's; color: dark brown` style pairs, separated by `;`, `|`
/// or newlines. Unknown keys are ignored.
pub fn parse_tag_attributes(tag: &str) -> Vec<Attribute> {
    tag.split([';', '|', '\n'])
        .filter_map(|part| {
            let (key, value) = part.split_once(':')?;
            let kind = AttributeKind::from_key(key)?;
            let value = value.trim();
            (!value.is_empty()).then(|| Attribute::new(kind, value))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attributes_from_tags() {
        let m = ProductMetadata::new(
            "sku-1",
            "Hershey's syrup",
            "Brand: Hershey's; Colour: dark brown | size: 16 oz\npackaging: bottle; shape: round",
            vec![],
        )
        .unwrap();
        assert_eq!(m.attribute(AttributeKind::Brand), Some("Hershey's"));
        assert_eq!(m.attribute(AttributeKind::Color), Some("dark brown"));
        assert_eq!(m.attribute(AttributeKind::Size), Some("16 oz"));
        assert_eq!(m.attribute(AttributeKind::Form), Some("bottle"));
        assert_eq!(m.attributes.len(), 4);
    }

    #[test]
    fn explicit_attributes_win() {
        let m = ProductMetadata::new("s", "d", "brand: Other", vec![Attribute::new(AttributeKind::Brand, "Hershey's")]).unwrap();
        assert_eq!(m.attribute(AttributeKind::Brand), Some("Hershey's"));
        assert_eq!(m.attributes.len(), 1);
    }

    #[test]
    fn free_text_tags_give_no_attributes() {
        let m = ProductMetadata::new("s", "d", "a red box with a logo", vec![]).unwrap();
        assert!(m.attributes.is_empty());
    }

    #[test]
    fn empty_fields_rejected() {
        assert!(matches!(ProductMetadata::new("", "d", "", vec![]), Err(CaptionError::EmptyMetadata(_))));
        assert!(matches!(ProductMetadata::new("s", "  ", "", vec![]), Err(CaptionError::EmptyMetadata(_))));
    }
}
