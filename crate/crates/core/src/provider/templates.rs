//! Prompt templates, stored as text resources.
//!
//! A template file holds the instruction body, a `<<<INPUT>>>` marker line
//! and the per-call request section. Both parts may contain `{{name}}`
//! placeholders.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::ProviderError;

pub const INPUT_MARKER: &str = "<<<INPUT>>>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Properties,
    DiversifyText,
    DiversifyImage,
    CandidatesText,
    CandidatesImage,
    HistoryExtract,
    PromptCompose,
    OrganizeHistory,
    AdaptivePath,
    RecommendDirections,
}

impl TemplateId {
    pub const ALL: [TemplateId; 10] = [
        TemplateId::Properties,
        TemplateId::DiversifyText,
        TemplateId::DiversifyImage,
        TemplateId::CandidatesText,
        TemplateId::CandidatesImage,
        TemplateId::HistoryExtract,
        TemplateId::PromptCompose,
        TemplateId::OrganizeHistory,
        TemplateId::AdaptivePath,
        TemplateId::RecommendDirections,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Properties => "properties",
            TemplateId::DiversifyText => "diversify_text",
            TemplateId::DiversifyImage => "diversify_image",
            TemplateId::CandidatesText => "candidates_text",
            TemplateId::CandidatesImage => "candidates_image",
            TemplateId::HistoryExtract => "history_extract",
            TemplateId::PromptCompose => "prompt_compose",
            TemplateId::OrganizeHistory => "organize_history",
            TemplateId::AdaptivePath => "adaptive_path",
            TemplateId::RecommendDirections => "recommend_directions",
        }
    }

    /// Reply shape the gateway validates against.
    pub fn response_schema(self) -> &'static str {
        match self {
            TemplateId::Properties => r#"{"outputs": [{"property_name": string, "property_type": "text"|"image"}] x8}"#,
            TemplateId::DiversifyText | TemplateId::DiversifyImage => r#"{"outputs": {"variations": [string] x9}}"#,
            TemplateId::CandidatesText => r#"{"outputs": {"literal_variations": [string] x10}}"#,
            TemplateId::CandidatesImage => r#"{"outputs": {"prompts": [string] x5}}"#,
            TemplateId::HistoryExtract => r#"{"descriptions": [{"property": string, "description": string}]}"#,
            TemplateId::PromptCompose => r#"{"prompt": string}"#,
            TemplateId::OrganizeHistory => r#"{"id": string|null}"#,
            TemplateId::AdaptivePath => r#"[[{"id": string, "property": string, "direction": string, "novelty": int}] x3]"#,
            TemplateId::RecommendDirections => r#"{"typical": string, "unique": string}"#,
        }
    }

    fn builtin_source(self) -> &'static str {
        match self {
            TemplateId::Properties => include_str!("../../templates/properties.txt"),
            TemplateId::DiversifyText => include_str!("../../templates/diversify_text.txt"),
            TemplateId::DiversifyImage => include_str!("../../templates/diversify_image.txt"),
            TemplateId::CandidatesText => include_str!("../../templates/candidates_text.txt"),
            TemplateId::CandidatesImage => include_str!("../../templates/candidates_image.txt"),
            TemplateId::HistoryExtract => include_str!("../../templates/history_extract.txt"),
            TemplateId::PromptCompose => include_str!("../../templates/prompt_compose.txt"),
            TemplateId::OrganizeHistory => include_str!("../../templates/organize_history.txt"),
            TemplateId::AdaptivePath => include_str!("../../templates/adaptive_path.txt"),
            TemplateId::RecommendDirections => include_str!("../../templates/recommend_directions.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
    pub request: String,
}

/// Placeholder names in `text`, in order of first appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let name = &after[..end];
        if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && !out.iter().any(|n| n == name) {
            out.push(name.to_owned());
        }
        rest = &after[end + 2..];
    }
    out
}

fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => serde_json::to_string_pretty(other).expect("json value serializes"),
    }
}

impl PromptTemplate {
    pub fn parse(id: TemplateId, source: &str) -> Result<Self, ProviderError> {
        let (body, request) = source
            .split_once(INPUT_MARKER)
            .ok_or_else(|| ProviderError::Validation(format!("template {id} lacks the {INPUT_MARKER} marker")))?;
        Ok(Self {
            id,
            body: body.trim_end().to_owned(),
            request: request.trim().to_owned(),
        })
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        placeholders(&self.body)
            .into_iter()
            .chain(placeholders(&self.request))
            .collect()
    }

    fn fill(&self, text: &str, vars: &Map<String, Value>) -> Result<String, ProviderError> {
        let mut out = text.to_owned();
        for name in placeholders(text) {
            let value = vars.get(&name).ok_or_else(|| {
                ProviderError::Validation(format!("template {} needs variable {name:?}", self.id))
            })?;
            out = out.replace(&format!("{{{{{name}}}}}"), &render_value(value));
        }
        Ok(out)
    }

    /// `(system, user)` messages with every placeholder substituted.
    pub fn render(&self, vars: &Map<String, Value>) -> Result<(String, String), ProviderError> {
        let system = self.fill(&self.body, vars)?;
        let user = self.fill(&self.request, vars)?;
        Ok((system, user))
    }
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: Vec<PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = TemplateId::ALL
            .iter()
            .map(|&id| PromptTemplate::parse(id, id.builtin_source()).expect("builtin templates are well-formed"))
            .collect();
        Self { templates }
    }

    /// Builtins overridden by any `<id>.txt` present in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, ProviderError> {
        let mut set = Self::builtin();
        for t in &mut set.templates {
            let path = dir.join(format!("{}.txt", t.id));
            match std::fs::read_to_string(&path) {
                Ok(source) => {
                    let parsed = PromptTemplate::parse(t.id, &source)?;
                    if parsed.placeholders() != t.placeholders() {
                        return Err(ProviderError::Validation(format!(
                            "template override {} changes the placeholder set",
                            path.display()
                        )));
                    }
                    *t = parsed;
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(ProviderError::Validation(format!("{}: {e}", path.display()))),
            }
        }
        Ok(set)
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        self.templates
            .iter()
            .find(|t| t.id == id)
            .expect("every template id is loaded")
    }
}
