//! Reuse: per-property evolution graphs, block and path copies (literal or
//! adapted to the paste location) and direction recommendations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result, Stage};
use crate::model::{BlockId, EventBody, ExplorationBlock, ReuseMode, ReuseOrigin, Session, Typicality};
use crate::provider::schema::{validate_adaptive, AdaptiveReply, OrganizeReply, PathStep, RecommendReply};
use crate::provider::{vars, ProviderGateway, TemplateId};

/// Most relevant earlier log for `new_log`, by id. An id the model invents
/// is treated as no match.
pub fn organize_logs(gw: &ProviderGateway, logs: &[(String, String)], new_log: &str) -> Result<Option<String>> {
    if new_log.trim().is_empty() {
        return Err(Error::Validation("new exploration log must be nonempty".into()));
    }
    if logs.is_empty() {
        return Ok(None);
    }
    let log_values: Vec<_> = logs.iter().map(|(id, d)| json!({"id": id, "direction": d})).collect();
    let reply: OrganizeReply = gw
        .complete_structured(
            TemplateId::OrganizeHistory,
            vars([("logs", json!(log_values)), ("new_log", json!(new_log))]),
            gw.attempts,
            |_| Ok(()),
        )
        .map_err(Error::provider(Stage::Organize))?;
    match reply.id {
        Some(id) if logs.iter().any(|(l, _)| *l == id) => Ok(Some(id)),
        Some(id) => {
            tracing::warn!(%id, "organize_history returned an unknown log id; ignoring");
            Ok(None)
        }
        None => Ok(None),
    }
}

/// Evolution parent for a new `property` block with `direction`: earlier
/// blocks of that property, passed oldest first.
pub fn organize_history(gw: &ProviderGateway, session: &Session, property: &str, direction: &str) -> Result<Option<BlockId>> {
    let logs: Vec<(String, String)> = session
        .blocks_in_order()
        .into_iter()
        .filter(|b| b.property == property)
        .map(|b| (b.id.to_string(), b.direction.clone()))
        .collect();
    Ok(organize_logs(gw, &logs, direction)?.map(BlockId))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionNode {
    pub block_id: BlockId,
    pub direction: String,
    pub typicality: Typicality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionGraph {
    pub property: String,
    pub nodes: Vec<EvolutionNode>,
    pub parent_links: BTreeMap<BlockId, Option<BlockId>>,
}

pub fn evolution_graph(session: &Session, property: &str) -> Result<EvolutionGraph> {
    session
        .property(property)
        .ok_or_else(|| Error::NotFound(format!("property {property:?}")))?;
    let blocks: Vec<&ExplorationBlock> = session
        .blocks_in_order()
        .into_iter()
        .filter(|b| b.property == property)
        .collect();
    Ok(EvolutionGraph {
        property: property.to_owned(),
        nodes: blocks
            .iter()
            .map(|b| EvolutionNode {
                block_id: b.id.clone(),
                direction: b.direction.clone(),
                typicality: b.typicality,
            })
            .collect(),
        parent_links: blocks
            .iter()
            .map(|b| (b.id.clone(), b.evolution_parent.clone()))
            .collect(),
    })
}

fn clone_settings(session: &Session, source: &ExplorationBlock, offset: u64, mode: ReuseMode) -> ExplorationBlock {
    ExplorationBlock {
        id: session.next_block_id(offset),
        property: source.property.clone(),
        direction: source.direction.clone(),
        typicality: source.typicality,
        suggestions: Vec::new(),
        retired: Vec::new(),
        created_at: session.next_block_ordinal() + offset,
        reuse_origin: Some(ReuseOrigin {
            source_block_id: source.id.clone(),
            mode,
        }),
        anchor_result_item: None,
        evolution_parent: Some(source.id.clone()),
    }
}

/// New block with the source's property, direction and typicality.
/// Suggestions are not copied; the caller re-crafts them in context.
pub fn copy_block(session: &mut Session, source: &BlockId, parent: Option<&BlockId>) -> Result<BlockId> {
    let src = session.block(source)?.clone();
    if let Some(p) = parent {
        session.block(p)?;
    }
    let block = clone_settings(session, &src, 0, ReuseMode::BlockCopy);
    let id = block.id.clone();
    session.append_event(EventBody::BlockCopied {
        source: source.clone(),
        block,
        parent: parent.cloned(),
    })?;
    Ok(id)
}

/// `path` must be a descending chain: each block the parent of the next.
pub fn check_path(session: &Session, path: &[BlockId]) -> Result<()> {
    if path.is_empty() {
        return Err(Error::Validation("path must contain at least one block".into()));
    }
    for b in path {
        session.block(b)?;
    }
    for w in path.windows(2) {
        if session.parent_of(&w[1]) != Some(&w[0]) {
            return Err(Error::Graph(format!("{} is not the parent of {}; path must be a connected chain", w[0], w[1])));
        }
    }
    Ok(())
}

pub fn copy_path_literal(session: &mut Session, path: &[BlockId], parent: Option<&BlockId>) -> Result<Vec<BlockId>> {
    check_path(session, path)?;
    if let Some(p) = parent {
        session.block(p)?;
    }
    let blocks: Vec<ExplorationBlock> = path
        .iter()
        .enumerate()
        .map(|(i, src)| clone_settings(session, &session.blocks()[src], i as u64, ReuseMode::PathLiteral))
        .collect();
    let ids = blocks.iter().map(|b| b.id.clone()).collect();
    session.append_event(EventBody::PathCopiedLiteral {
        sources: path.to_vec(),
        blocks,
        parent: parent.cloned(),
    })?;
    Ok(ids)
}

/// The replication path as sent to the adaptation prompt.
pub fn path_steps(session: &Session, path: &[BlockId]) -> Result<Vec<PathStep>> {
    path.iter()
        .map(|id| {
            let b = session.block(id)?;
            Ok(PathStep {
                id: id.to_string(),
                property: b.property.clone(),
                direction: b.direction.clone(),
                novelty: i64::from(b.typicality.level()),
            })
        })
        .collect()
}

/// Literal copy plus three adapted variants, least to most deviating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMenu {
    pub literal: Vec<PathStep>,
    pub variants: Vec<Vec<PathStep>>,
}

/// Ask for three adaptations of `path` to the chain ending at `parent`.
pub fn adaptive_variants(gw: &ProviderGateway, session: &Session, path: &[BlockId], parent: Option<&BlockId>) -> Result<PathMenu> {
    check_path(session, path)?;
    let pre_explored: Vec<_> = match parent {
        Some(p) => session
            .chain_context(p)?
            .entries
            .iter()
            .map(|e| {
                json!({
                    "id": e.block_id,
                    "property": e.property,
                    "direction": e.direction,
                    "novelty": e.typicality.level(),
                    "options": e.suggestions.iter().map(|s| s.content.label()).collect::<Vec<_>>(),
                })
            })
            .collect(),
        None => Vec::new(),
    };
    let literal = path_steps(session, path)?;
    let variants = adapt_steps(gw, session.topic(), &json!(pre_explored), &literal)?;
    Ok(PathMenu { literal, variants })
}

/// Raw adaptation call: three variants that keep `replication`'s ids and
/// property sequence.
pub fn adapt_steps(gw: &ProviderGateway, topic: &str, pre_explored: &serde_json::Value, replication: &[PathStep]) -> Result<AdaptiveReply> {
    gw.complete_structured(
        TemplateId::AdaptivePath,
        vars([
            ("topic", json!(topic)),
            ("pre_explored", pre_explored.clone()),
            ("replication", json!(replication)),
        ]),
        gw.attempts,
        |r: &AdaptiveReply| validate_adaptive(r, replication),
    )
    .map_err(Error::provider(Stage::Adaptive))
}

/// Instantiate adapted `steps` (variant `variant`, 1-based) under `parent`.
/// Returned novelty is clamped to 1..=5 and becomes the block typicality.
pub fn apply_path_template(
    session: &mut Session,
    path: &[BlockId],
    parent: Option<&BlockId>,
    steps: &[PathStep],
    variant: usize,
) -> Result<Vec<BlockId>> {
    check_path(session, path)?;
    if let Some(p) = parent {
        session.block(p)?;
    }
    let literal = path_steps(session, path)?;
    validate_adaptive(&vec![steps.to_vec(); 3], &literal).map_err(Error::Validation)?;
    // align each source block with a step carrying its id
    let mut remaining: Vec<&PathStep> = steps.iter().collect();
    let mut blocks = Vec::with_capacity(path.len());
    for (i, src) in path.iter().enumerate() {
        let pos = remaining
            .iter()
            .position(|s| s.id == src.as_str())
            .ok_or_else(|| Error::Validation(format!("no adapted step for {src}")))?;
        let step = remaining.remove(pos);
        let mut b = clone_settings(session, session.block(src)?, i as u64, ReuseMode::PathAdaptive);
        b.direction = step.direction.trim().to_owned();
        b.typicality = Typicality::clamped(step.novelty);
        blocks.push(b);
    }
    let ids = blocks.iter().map(|b| b.id.clone()).collect();
    session.append_event(EventBody::PathCopiedAdaptive {
        sources: path.to_vec(),
        blocks,
        parent: parent.cloned(),
        variant,
    })?;
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub typical: String,
    pub unique: String,
}

/// Raw recommendation call for a property with the given history and
/// settings.
pub fn recommend_for(gw: &ProviderGateway, topic: &str, property: &str, history: &[String], settings: &[String]) -> Result<Recommendation> {
    let reply: RecommendReply = gw
        .complete_structured(
            TemplateId::RecommendDirections,
            vars([
                ("topic", json!(topic)),
                ("property", json!(property)),
                ("history", json!(history)),
                ("settings", json!(settings)),
            ]),
            gw.attempts,
            |r: &RecommendReply| r.validate_against(history),
        )
        .map_err(Error::provider(Stage::Recommend))?;
    Ok(Recommendation {
        typical: reply.typical.trim().to_owned(),
        unique: reply.unique.trim().to_owned(),
    })
}

/// One typical and one novel direction for `property`, given its history in
/// this session and the settings along `context`'s chain.
pub fn recommend_directions(
    gw: &ProviderGateway,
    session: &mut Session,
    property: &str,
    context: Option<&BlockId>,
) -> Result<Recommendation> {
    session
        .property(property)
        .ok_or_else(|| Error::NotFound(format!("property {property:?}")))?;
    let mut history: Vec<String> = Vec::new();
    for b in session.blocks_in_order() {
        if b.property == property && !history.iter().any(|h| h.eq_ignore_ascii_case(&b.direction)) {
            history.push(b.direction.clone());
        }
    }
    let settings: Vec<String> = match context {
        Some(c) => session
            .chain_context(c)?
            .entries
            .iter()
            .map(|e| format!("{}: {}", e.property, e.direction))
            .collect(),
        None => Vec::new(),
    };
    let rec = recommend_for(gw, session.topic(), property, &history, &settings)?;
    session.append_event(EventBody::DirectionRecommended {
        property: property.to_owned(),
        context: context.cloned(),
        typical: rec.typical.clone(),
        unique: rec.unique.clone(),
    })?;
    Ok(rec)
}
