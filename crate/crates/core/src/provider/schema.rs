//! Closed reply shapes, one per template. Unknown fields are rejected.

use serde::{Deserialize, Serialize};

use crate::model::PropertyKind;

fn check_strings(items: &[String], expected: usize, what: &str) -> Result<(), String> {
    if items.len() != expected {
        return Err(format!("expected exactly {expected} {what}, got {}", items.len()));
    }
    if items.iter().any(|s| s.trim().is_empty()) {
        return Err(format!("{what} must be nonempty strings"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertyEntry {
    pub property_name: String,
    pub property_type: PropertyKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertiesReply {
    pub outputs: Vec<PropertyEntry>,
}

impl PropertiesReply {
    pub fn validate(&self) -> Result<(), String> {
        if self.outputs.len() != 8 {
            return Err(format!("expected exactly 8 properties, got {}", self.outputs.len()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.outputs {
            if p.property_name.trim().is_empty() {
                return Err("property names must be nonempty".into());
            }
            if !seen.insert(p.property_name.trim().to_lowercase()) {
                return Err(format!("duplicate property {:?}", p.property_name));
            }
        }
        if !self.outputs.iter().any(|p| p.property_type == PropertyKind::Image) {
            return Err("at least one property must be image-based (e.g. image style)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variations {
    pub variations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationsReply {
    pub outputs: Variations,
}

impl VariationsReply {
    pub fn validate(&self) -> Result<(), String> {
        check_strings(&self.outputs.variations, 9, "variations")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiteralVariations {
    pub literal_variations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiteralVariationsReply {
    pub outputs: LiteralVariations,
}

impl LiteralVariationsReply {
    pub fn validate(&self) -> Result<(), String> {
        check_strings(&self.outputs.literal_variations, 10, "literal_variations")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prompts {
    pub prompts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptsReply {
    pub outputs: Prompts,
}

impl PromptsReply {
    pub fn validate(&self) -> Result<(), String> {
        check_strings(&self.outputs.prompts, 5, "prompts")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Description {
    pub property: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptionsReply {
    pub descriptions: Vec<Description>,
}

impl DescriptionsReply {
    /// Exactly one nonempty paragraph per requested property, in order.
    pub fn validate_for(&self, properties: &[String]) -> Result<(), String> {
        let got: Vec<&str> = self.descriptions.iter().map(|d| d.property.as_str()).collect();
        if got != properties.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(format!("descriptions must cover exactly {properties:?} in order, got {got:?}"));
        }
        if self.descriptions.iter().any(|d| d.description.trim().is_empty()) {
            return Err("descriptions must be nonempty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeReply {
    pub prompt: String,
}

impl ComposeReply {
    pub fn validate(&self) -> Result<(), String> {
        if self.prompt.trim().is_empty() {
            return Err("prompt must be nonempty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganizeReply {
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathStep {
    pub id: String,
    pub property: String,
    pub direction: String,
    pub novelty: i64,
}

/// Three adapted copies of the replication path.
pub type AdaptiveReply = Vec<Vec<PathStep>>;

/// Each variant must keep the request's id multiset and property sequence.
pub fn validate_adaptive(reply: &AdaptiveReply, request: &[PathStep]) -> Result<(), String> {
    if reply.len() != 3 {
        return Err(format!("expected exactly 3 paths, got {}", reply.len()));
    }
    let mut want_ids: Vec<&str> = request.iter().map(|s| s.id.as_str()).collect();
    want_ids.sort_unstable();
    let want_props: Vec<&str> = request.iter().map(|s| s.property.as_str()).collect();
    for (n, path) in reply.iter().enumerate() {
        let mut ids: Vec<&str> = path.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids != want_ids {
            return Err(format!("path {} ids {ids:?} must match the replication path ids {want_ids:?}", n + 1));
        }
        let props: Vec<&str> = path.iter().map(|s| s.property.as_str()).collect();
        if props != want_props {
            return Err(format!("path {} properties {props:?} must equal {want_props:?}", n + 1));
        }
        if path.iter().any(|s| s.direction.trim().is_empty()) {
            return Err(format!("path {} has an empty direction", n + 1));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendReply {
    pub typical: String,
    pub unique: String,
}

impl RecommendReply {
    /// Short (at most three words) and not already explored.
    pub fn validate_against(&self, history: &[String]) -> Result<(), String> {
        for (label, d) in [("typical", &self.typical), ("unique", &self.unique)] {
            let words = d.split_whitespace().count();
            if words == 0 || words > 3 {
                return Err(format!("{label} direction {d:?} must be 1-3 words"));
            }
            if history.iter().any(|h| h.trim().eq_ignore_ascii_case(d.trim())) {
                return Err(format!("{label} direction {d:?} was already explored"));
            }
        }
        if self.typical.trim().eq_ignore_ascii_case(self.unique.trim()) {
            return Err("typical and unique directions must differ".into());
        }
        Ok(())
    }
}
