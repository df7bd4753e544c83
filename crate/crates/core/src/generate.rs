//! Result generation: describe earlier choices from the most recent image in
//! the chain, compose one text-to-image prompt per suggestion and realize it.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result, Stage};
use crate::model::{BlockId, ContextChain, EventBody, ResultBlock, ResultItem, Session, Suggestion, SuggestionContent};
use crate::parallel::bounded_map;
use crate::provider::schema::ComposeReply;
use crate::provider::{vars, ImageRef, ProviderGateway, TemplateId};
use crate::suggest::ImageMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyDescription {
    pub property: String,
    pub description: String,
}

/// Descriptions of earlier properties, in chain order, all taken from one
/// image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyDescriptions {
    pub entries: Vec<PropertyDescription>,
    pub source_image: Option<ImageRef>,
}

impl PropertyDescriptions {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, property: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.property == property)
            .map(|e| e.description.as_str())
    }
}

/// The image history extraction reads: from the nearest ancestor that has
/// images, the item its chain child was anchored on, else the first item
/// whose suggestion is still visible, else its first image.
pub fn history_image(chain: &ContextChain) -> Option<ImageRef> {
    let entries = &chain.entries;
    let k = (0..entries.len() - 1).rev().find(|&k| !entries[k].images.is_empty())?;
    let source = &entries[k];
    let anchor = entries[k + 1].anchor_result_item.as_ref();
    let anchored = anchor.and_then(|a| source.images.iter().find(|i| &i.suggestion_id == a));
    let visible = || {
        source
            .images
            .iter()
            .find(|i| source.suggestions.iter().any(|s| s.id == i.suggestion_id))
    };
    anchored
        .or_else(visible)
        .or_else(|| source.images.first())
        .map(|i| i.image.clone())
}

/// Ancestor property names, root first, without repeats.
pub fn ancestor_properties(chain: &ContextChain) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for e in chain.ancestors() {
        if !out.contains(&e.property) {
            out.push(e.property.clone());
        }
    }
    out
}

pub fn extract_history_descriptions(gw: &ProviderGateway, chain: &ContextChain) -> Result<PropertyDescriptions> {
    let Some(image) = history_image(chain) else {
        return Ok(PropertyDescriptions::default());
    };
    let properties = ancestor_properties(chain);
    let entries = gw
        .describe_properties(&image, &properties)
        .map_err(Error::provider(Stage::History))?
        .into_iter()
        .map(|(property, description)| PropertyDescription { property, description })
        .collect();
    Ok(PropertyDescriptions {
        entries,
        source_image: Some(image),
    })
}

/// Caption for the newest choice. Image suggestions are described from their
/// image in full mode; economy mode uses the candidate prompt directly.
fn current_caption(gw: &ProviderGateway, property: &str, suggestion: &Suggestion, mode: ImageMode) -> Result<String> {
    match (&suggestion.content, mode) {
        (SuggestionContent::Image { image, .. }, ImageMode::Full) => {
            let described = gw
                .describe_properties(image, &[property.to_owned()])
                .map_err(Error::provider(Stage::Compose))?;
            Ok(format!("{property}: {}", described[0].1))
        }
        (content, _) => Ok(format!("{property}: {}", content.label())),
    }
}

pub fn compose_generation_prompt(
    gw: &ProviderGateway,
    history: &PropertyDescriptions,
    property: &str,
    suggestion: &Suggestion,
    mode: ImageMode,
) -> Result<String> {
    if property.trim().is_empty() || suggestion.content.label().trim().is_empty() {
        return Err(Error::Validation("new intent needs a property and a nonempty suggestion".into()));
    }
    let current = current_caption(gw, property, suggestion, mode)?;
    let previous = history
        .entries
        .iter()
        .map(|e| format!("{}: {}", e.property, e.description))
        .collect::<Vec<_>>()
        .join("\n");
    let reply: ComposeReply = gw
        .complete_structured(
            TemplateId::PromptCompose,
            vars([
                ("current_property_caption_text", json!(current)),
                ("prev_properties_caption_text", json!(previous)),
            ]),
            gw.attempts,
            ComposeReply::validate,
        )
        .map_err(Error::provider(Stage::Compose))?;
    Ok(reply.prompt)
}

/// One composed prompt and image per visible suggestion, in order. Item
/// failures are recorded on the item rather than failing the block.
pub fn realize_results(gw: &ProviderGateway, session: &mut Session, block: &BlockId, mode: ImageMode) -> Result<ResultBlock> {
    let b = session.block(block)?;
    let active: Vec<Suggestion> = b.active_suggestions().cloned().collect();
    if active.is_empty() {
        return Err(Error::Conflict(format!("block {block} has no active suggestions")));
    }
    let property = b.property.clone();
    let chain = session.chain_context(block)?;
    let history = extract_history_descriptions(gw, &chain)?;
    let items = bounded_map(&active, gw.parallelism, |_, s| {
        let prompt = match compose_generation_prompt(gw, &history, &property, s, mode) {
            Ok(p) => p,
            Err(e) => {
                return ResultItem {
                    suggestion_id: s.id.clone(),
                    image: None,
                    final_prompt: String::new(),
                    error: Some(e.to_string()),
                }
            }
        };
        match gw.generate_image(&prompt) {
            Ok(image) => ResultItem {
                suggestion_id: s.id.clone(),
                image: Some(image),
                final_prompt: prompt,
                error: None,
            },
            Err(e) => {
                tracing::warn!(suggestion = %s.id, error = %e, "image generation failed");
                ResultItem {
                    suggestion_id: s.id.clone(),
                    image: None,
                    final_prompt: prompt,
                    error: Some(Error::provider(Stage::Image)(e).to_string()),
                }
            }
        }
    });
    let result = ResultBlock {
        id: session.next_result_id(),
        parent_block_id: block.clone(),
        created_at: session.results().len() as u64 + 1,
        items,
    };
    session.append_event(EventBody::ImagesGenerated { result: result.clone() })?;
    Ok(result)
}
