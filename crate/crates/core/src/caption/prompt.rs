use serde::Serialize;

use super::{CaptionError, ProductMetadata};

pub const DEFAULT_TOKEN_BUDGET: usize = 77;

pub const ROLE_LINE: &str = "You are a helpful assistant that generates descriptions for grocery products.";

pub const CONSTRAINT_LINES: [&str; 2] = [
    "Start with \"The product is ...\" in every description.",
    "Prioritize prominent visual attributes from the tag description including color, shape, brand, size, packaging, and form.",
];

fn task_line(budget: usize) -> String {
    format!(
        "Generate a concise product description in ≤{budget} tokens given the product metadata. \
         Output a JSON object with key \"label\"."
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptionJob {
    pub metadata: ProductMetadata,
    /// Full rendered prompt: role, task, constraints, metadata.
    pub prompt: String,
    pub token_budget: usize,
}

impl CaptionJob {
    pub fn system_message(&self) -> &str {
        ROLE_LINE
    }

    /// Everything after the role block.
    pub fn user_message(&self) -> &str {
        self.prompt
            .split_once("\n\n")
            .map(|(_, rest)| rest)
            .unwrap_or(&self.prompt)
    }
}

pub fn build_prompt(metadata: &ProductMetadata, token_budget: usize) -> Result<CaptionJob, CaptionError> {
    metadata.check()?;
    if token_budget == 0 {
        return Err(CaptionError::InvalidBudget);
    }
    let mut prompt = format!("Role: {ROLE_LINE}\n\nTask: {}\n\nConstraints:\n", task_line(token_budget));
    for line in CONSTRAINT_LINES {
        prompt.push_str("- ");
        prompt.push_str(line);
        prompt.push('\n');
    }
    prompt.push_str("\nProduct metadata:\n");
    prompt.push_str(&format!("SKU: {}\n", metadata.sku_id));
    prompt.push_str(&format!("Product description: {}\n", metadata.raw_description.trim()));
    prompt.push_str(&format!("Tag description: {}\n", metadata.tag_description.trim()));
    if !metadata.attributes.is_empty() {
        let attrs: Vec<String> = metadata
            .attributes
            .iter()
            .map(|a| format!("{}: {}", a.kind.name(), a.value))
            .collect();
        prompt.push_str(&format!("Key attributes: {}\n", attrs.join("; ")));
    }
    Ok(CaptionJob {
        metadata: metadata.clone(),
        prompt,
        token_budget,
    })
}
