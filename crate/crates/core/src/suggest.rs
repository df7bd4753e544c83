//! Suggestion pipeline: topic → properties, direction → ten diversified
//! directions → candidate pool → typicality slice → four diverse
//! representatives, plus refinement of a block's suggestions.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::embedding::{EmbeddingGateway, EmbeddingVector};
use crate::error::{Error, Result, Stage};
use crate::model::{
    BlockId, ContextChain, EventBody, PropertyKind, PropertyOrigin, PropertySpec, RefineAction, Session, Suggestion,
    SuggestionContent, SuggestionId, SuggestionState,
};
use crate::numeric::{self, even_slice_sizes, KMeansOptions};
use crate::parallel::bounded_map;
use crate::provider::schema::{LiteralVariationsReply, PromptsReply, PropertiesReply, VariationsReply};
use crate::provider::{vars, ImageRef, ProviderError, ProviderGateway, TemplateId};

pub const DIRECTIONS: usize = 10;
pub const TEXT_PER_DIRECTION: usize = 10;
pub const IMAGE_PER_DIRECTION: usize = 5;
pub const LEVELS: usize = 5;
pub const REPRESENTATIVES: usize = 4;
/// Calls per direction during expansion before the direction counts as failed.
pub const EXPAND_TRIES: usize = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageMode {
    /// Realize every image candidate and score it by its image.
    Full,
    /// Score image candidates by prompt text; realize only representatives.
    #[default]
    Economy,
}

impl std::str::FromStr for ImageMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(ImageMode::Full),
            "economy" => Ok(ImageMode::Economy),
            other => Err(format!("unknown image mode {other:?} (expected full|economy)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CandidateContent {
    Text { text: String },
    Image { prompt: String, image: Option<ImageRef> },
}

impl CandidateContent {
    pub fn label(&self) -> &str {
        match self {
            CandidateContent::Text { text } => text,
            CandidateContent::Image { prompt, .. } => prompt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub content: CandidateContent,
    pub source_direction: String,
    /// Position of the source direction in the diversified list.
    pub direction_index: usize,
    /// Position in the pool before scoring.
    pub index: usize,
    /// Cosine to the input direction; `None` until scored or if unscorable.
    pub typicality_score: Option<f64>,
    pub cluster_embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub property: PropertySpec,
    pub input_direction: String,
    pub directions: Vec<String>,
    pub candidates: Vec<Candidate>,
    pub mode: ImageMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgroup {
    pub level: u8,
    pub members: Vec<Candidate>,
}

impl Subgroup {
    pub fn mean_score(&self) -> Option<f64> {
        mean(self.members.iter().filter_map(|m| m.typicality_score))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// A subgroup member kept on the session for later refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolMember {
    pub content: CandidateContent,
    pub source_direction: String,
    pub typicality_score: f64,
    pub embedding: Vec<f64>,
}

/// The typicality slice a block's suggestions were drawn from, with its
/// clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockPool {
    pub property: String,
    pub input_direction: String,
    pub level: u8,
    pub members: Vec<PoolMember>,
    /// Cluster label per member.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

fn provider(stage: Stage) -> impl FnOnce(ProviderError) -> Error {
    Error::provider(stage)
}

/// Deterministic RNG for one stochastic step of one block.
pub fn step_rng(seed: u64, step: &str, block: &BlockId, salt: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(step.as_bytes());
    h.update(block.as_str().as_bytes());
    h.update(salt.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Eight suggested properties for `topic`, in exploration order.
pub fn generate_properties(gw: &ProviderGateway, topic: &str) -> Result<Vec<PropertySpec>> {
    if topic.trim().is_empty() {
        return Err(Error::Validation("topic must be nonempty".into()));
    }
    let reply: PropertiesReply = gw
        .complete_structured(
            TemplateId::Properties,
            vars([("topic", json!(topic))]),
            gw.attempts,
            PropertiesReply::validate,
        )
        .map_err(provider(Stage::Properties))?;
    Ok(reply
        .outputs
        .into_iter()
        .map(|p| PropertySpec::new(p.property_name.trim(), p.property_type, PropertyOrigin::Suggested))
        .collect())
}

fn push_distinct(list: &mut Vec<String>, item: &str) -> bool {
    let item = item.trim();
    if item.is_empty() || list.iter().any(|x| x.eq_ignore_ascii_case(item)) {
        return false;
    }
    list.push(item.to_owned());
    true
}

/// The input direction followed by nine generated variations (four
/// subtypes, five unrelated), case-insensitively distinct.
pub fn diversify_directions(
    gw: &ProviderGateway,
    property: &str,
    direction: &str,
    kind: PropertyKind,
) -> Result<Vec<String>> {
    if direction.trim().is_empty() {
        return Err(Error::Validation("direction must be nonempty".into()));
    }
    let template = match kind {
        PropertyKind::Text => TemplateId::DiversifyText,
        PropertyKind::Image => TemplateId::DiversifyImage,
    };
    let mut out = vec![direction.trim().to_owned()];
    let mut request = vars([("property", json!(property)), ("direction", json!(direction.trim()))]);
    for round in 0..=gw.attempts {
        let reply: VariationsReply = gw
            .complete_structured(template, request.clone(), gw.attempts, VariationsReply::validate)
            .map_err(provider(Stage::Diversify))?;
        for v in &reply.outputs.variations {
            if out.len() < DIRECTIONS {
                push_distinct(&mut out, v);
            }
        }
        if out.len() == DIRECTIONS {
            return Ok(out);
        }
        tracing::debug!(round, have = out.len(), "duplicate directions, re-requesting");
        request.insert("exclude".into(), json!(out));
    }
    Err(Error::Provider {
        stage: Stage::Diversify,
        source: ProviderError::Schema {
            message: format!("only {} distinct directions after retries", out.len()),
            raw: out.join(", "),
        },
    })
}

fn expand_one(
    gw: &ProviderGateway,
    chain: &ContextChain,
    topic: &str,
    property: &PropertySpec,
    direction: &str,
) -> std::result::Result<Vec<String>, ProviderError> {
    let mut last = None;
    for _ in 0..EXPAND_TRIES {
        let attempt = match property.kind {
            PropertyKind::Text => gw
                .complete_structured(
                    TemplateId::CandidatesText,
                    vars([
                        ("topic", json!(topic)),
                        ("settings", json!(chain.settings())),
                        ("property", json!(property.name)),
                        ("direction", json!(direction)),
                    ]),
                    gw.attempts,
                    LiteralVariationsReply::validate,
                )
                .map(|r: LiteralVariationsReply| r.outputs.literal_variations),
            PropertyKind::Image => gw
                .complete_structured(
                    TemplateId::CandidatesImage,
                    vars([("image_property", json!(property.name)), ("property_value", json!(direction))]),
                    gw.attempts,
                    PromptsReply::validate,
                )
                .map(|r: PromptsReply| r.outputs.prompts),
        };
        match attempt {
            Ok(items) => return Ok(items),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one try"))
}

/// Ten text suggestions (or five image prompts) per direction, tagged with
/// their source direction. In full image mode every prompt is realized.
pub fn expand_candidates(
    gw: &ProviderGateway,
    chain: &ContextChain,
    topic: &str,
    property: &PropertySpec,
    directions: &[String],
    mode: ImageMode,
) -> Result<CandidatePool> {
    if directions.len() != DIRECTIONS {
        return Err(Error::Validation(format!(
            "expansion needs {DIRECTIONS} directions, got {}",
            directions.len()
        )));
    }
    let replies = bounded_map(directions, gw.parallelism, |_, d| expand_one(gw, chain, topic, property, d));
    let failed: Vec<String> = directions
        .iter()
        .zip(&replies)
        .filter(|(_, r)| r.is_err())
        .map(|(d, _)| d.clone())
        .collect();
    if !failed.is_empty() {
        for (d, r) in directions.iter().zip(&replies) {
            if let Err(e) = r {
                tracing::warn!(direction = %d, error = %e, "expansion failed");
            }
        }
        return Err(Error::Pool { failed });
    }
    let mut candidates = Vec::new();
    for (di, (d, items)) in directions.iter().zip(replies).enumerate() {
        for item in items.expect("failures handled") {
            let content = match property.kind {
                PropertyKind::Text => CandidateContent::Text { text: item },
                PropertyKind::Image => CandidateContent::Image {
                    prompt: item,
                    image: None,
                },
            };
            candidates.push(Candidate {
                content,
                source_direction: d.clone(),
                direction_index: di,
                index: candidates.len(),
                typicality_score: None,
                cluster_embedding: None,
            });
        }
    }
    if property.kind == PropertyKind::Image && mode == ImageMode::Full {
        let images = bounded_map(&candidates, gw.parallelism, |_, c| gw.generate_image(c.content.label()));
        for (c, img) in candidates.iter_mut().zip(images) {
            match img {
                Ok(r) => {
                    if let CandidateContent::Image { image, .. } = &mut c.content {
                        *image = Some(r);
                    }
                }
                Err(e) => tracing::warn!(prompt = c.content.label(), error = %e, "candidate image failed; it will be unscorable"),
            }
        }
    }
    Ok(CandidatePool {
        property: property.clone(),
        input_direction: directions[0].clone(),
        directions: directions.to_vec(),
        candidates,
        mode,
    })
}

fn score_one(pool: &CandidatePool, c: &Candidate, emb: &EmbeddingGateway, gw: &ProviderGateway, input: Option<&EmbeddingVector<f64>>) -> Result<(f64, Vec<f64>)> {
    let embedding = |e| Error::embedding(Stage::Score)(e);
    match &c.content {
        CandidateContent::Text { text } => {
            let (score, _) = emb.text_similarity(&pool.input_direction, text).map_err(embedding)?;
            let cluster = emb.embed_sentence(text).map_err(embedding)?;
            Ok((score, cluster.into_values()))
        }
        CandidateContent::Image { prompt, image } => {
            let input = input.ok_or_else(|| Error::Validation("input direction has no joint embedding".into()))?;
            let v = match (pool.mode, image) {
                (ImageMode::Full, Some(img)) => {
                    let bytes = gw.store.get(img).map_err(provider(Stage::Score))?;
                    emb.embed_image(img, &bytes).map_err(embedding)?
                }
                (ImageMode::Full, None) => return Err(Error::Validation(format!("candidate {prompt:?} has no image"))),
                (ImageMode::Economy, _) => emb.embed_joint_text(prompt).map_err(embedding)?,
            };
            let score = crate::embedding::cosine_similarity(input, &v).map_err(embedding)?;
            Ok((score, v.into_values()))
        }
    }
}

/// Fill in typicality scores and cluster embeddings. Candidates that cannot
/// be embedded stay unscored and are left out of partitioning.
pub fn score_pool(pool: &mut CandidatePool, emb: &EmbeddingGateway, gw: &ProviderGateway) -> Result<()> {
    let input = match pool.property.kind {
        PropertyKind::Image => Some(
            emb.embed_joint_text(&pool.input_direction)
                .map_err(Error::embedding(Stage::Score))?,
        ),
        PropertyKind::Text => None,
    };
    let snapshot = pool.clone();
    let scored = bounded_map(&snapshot.candidates, gw.parallelism, |_, c| score_one(&snapshot, c, emb, gw, input.as_ref()));
    for (c, s) in pool.candidates.iter_mut().zip(scored) {
        match s {
            Ok((score, embedding)) => {
                c.typicality_score = Some(score);
                c.cluster_embedding = Some(embedding);
            }
            Err(e) => {
                tracing::warn!(candidate = c.content.label(), error = %e, "candidate excluded: unscorable");
                c.typicality_score = None;
                c.cluster_embedding = None;
            }
        }
    }
    Ok(())
}

/// Rank scored candidates (score descending, then direction order, then
/// pool index) and cut them into five contiguous slices, larger slices
/// first. Returns pool indices per slice; slice 0 is the most typical.
pub fn partition(candidates: &[Candidate]) -> Vec<Vec<usize>> {
    let mut ranked: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].typicality_score.is_some() && candidates[i].cluster_embedding.is_some())
        .collect();
    ranked.sort_by(|&a, &b| {
        let (ca, cb) = (&candidates[a], &candidates[b]);
        cb.typicality_score
            .unwrap()
            .total_cmp(&ca.typicality_score.unwrap())
            .then(ca.direction_index.cmp(&cb.direction_index))
            .then(ca.index.cmp(&cb.index))
    });
    let mut slices = Vec::with_capacity(LEVELS);
    let mut rest = ranked.as_slice();
    for size in even_slice_sizes(rest.len(), LEVELS) {
        let (head, tail) = rest.split_at(size);
        slices.push(head.to_vec());
        rest = tail;
    }
    slices
}

/// The slice for `level` (1 = most typical).
pub fn score_and_partition(pool: &CandidatePool, level: u8) -> Result<Subgroup> {
    if !(1..=LEVELS as u8).contains(&level) {
        return Err(Error::Validation(format!("typicality level {level} outside 1..=5")));
    }
    let slices = partition(&pool.candidates);
    let members: Vec<Candidate> = slices[level as usize - 1]
        .iter()
        .map(|&i| pool.candidates[i].clone())
        .collect();
    if members.is_empty() {
        return Err(Error::NotEnoughData(format!("typicality slice {level} is empty")));
    }
    Ok(Subgroup { level, members })
}

/// Representative member indices, cluster label per member, centroids.
pub type Selection = (Vec<usize>, Vec<usize>, Vec<Vec<f64>>);

/// Four representatives: medoids of a k=4 k-means over unit-normalised
/// embeddings, returned in member order. Fewer than four members are all
/// returned.
pub fn select_representatives(embeddings: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<Selection> {
    if embeddings.is_empty() {
        return Err(Error::NotEnoughData("empty subgroup".into()));
    }
    let points: Vec<Vec<f64>> = embeddings.iter().map(|e| numeric::normalized(e)).collect();
    let k = REPRESENTATIVES.min(points.len());
    let fit = numeric::kmeans(
        &points,
        KMeansOptions {
            k,
            ..KMeansOptions::default()
        },
        rng,
    )
    .map_err(|e| Error::Validation(format!("clustering failed: {e}")))?;
    let mut reps = if points.len() <= REPRESENTATIVES {
        (0..points.len()).collect()
    } else {
        numeric::medoids(&points, &fit)
    };
    reps.sort_unstable();
    Ok((reps, fit.labels, fit.centroids))
}

fn realize(gw: &ProviderGateway, member: &PoolMember) -> Result<ImageRef> {
    match &member.content {
        CandidateContent::Image { image: Some(img), .. } => Ok(img.clone()),
        CandidateContent::Image { prompt, image: None } => gw.generate_image(prompt).map_err(provider(Stage::Image)),
        CandidateContent::Text { .. } => Err(Error::Validation("text member has no image".into())),
    }
}

fn to_suggestion(
    gw: &ProviderGateway,
    id: SuggestionId,
    member: &PoolMember,
    index: usize,
) -> Result<Suggestion> {
    let content = match &member.content {
        CandidateContent::Text { text } => SuggestionContent::Text { text: text.clone() },
        CandidateContent::Image { prompt, .. } => SuggestionContent::Image {
            prompt: prompt.clone(),
            image: realize(gw, member)?,
        },
    };
    Ok(Suggestion {
        id,
        content,
        source_direction: member.source_direction.clone(),
        similarity_to_input: member.typicality_score,
        state: SuggestionState::Active,
        pool_member: Some(index),
    })
}

/// Everything computed for a fresh block, before it is stored.
#[derive(Debug, Clone)]
pub struct Crafted {
    pub directions: Vec<String>,
    pub pool: CandidatePool,
    pub subgroup: Subgroup,
    pub block_pool: BlockPool,
    pub representatives: Vec<usize>,
}

/// Run diversify → expand → score → partition → select for `block`.
pub fn run_pipeline(
    gw: &ProviderGateway,
    emb: &EmbeddingGateway,
    session: &Session,
    block: &BlockId,
    mode: ImageMode,
) -> Result<Crafted> {
    let b = session.block(block)?;
    let property = session
        .property(&b.property)
        .ok_or_else(|| Error::NotFound(format!("property {:?}", b.property)))?
        .clone();
    let chain = session.chain_context(block)?;
    let directions = diversify_directions(gw, &property.name, &b.direction, property.kind)?;
    let mut pool = expand_candidates(gw, &chain, session.topic(), &property, &directions, mode)?;
    score_pool(&mut pool, emb, gw)?;
    let subgroup = score_and_partition(&pool, b.typicality.level())?;
    let embeddings: Vec<Vec<f64>> = subgroup
        .members
        .iter()
        .map(|m| m.cluster_embedding.clone().expect("partitioned members are embedded"))
        .collect();
    let mut rng = step_rng(session.seed(), "kmeans", block, session.last_seq());
    let (representatives, labels, centroids) = select_representatives(&embeddings, &mut rng)?;
    let block_pool = BlockPool {
        property: property.name.clone(),
        input_direction: pool.input_direction.clone(),
        level: subgroup.level,
        members: subgroup
            .members
            .iter()
            .map(|m| PoolMember {
                content: m.content.clone(),
                source_direction: m.source_direction.clone(),
                typicality_score: m.typicality_score.expect("scored"),
                embedding: m.cluster_embedding.clone().expect("embedded"),
            })
            .collect(),
        labels,
        centroids,
    };
    Ok(Crafted {
        directions,
        pool,
        subgroup,
        block_pool,
        representatives,
    })
}

/// Craft four suggestions for `block` and store them (replacing any earlier
/// ones, which are retired).
pub fn craft_suggestions(
    gw: &ProviderGateway,
    emb: &EmbeddingGateway,
    session: &mut Session,
    block: &BlockId,
    mode: ImageMode,
) -> Result<Vec<Suggestion>> {
    let crafted = run_pipeline(gw, emb, session, block, mode)?;
    let b = session.block(block)?;
    let reps = &crafted.representatives;
    let members = &crafted.block_pool.members;
    let realized = bounded_map(reps, gw.parallelism, |n, &i| to_suggestion(gw, b.next_suggestion_id(n), &members[i], i));
    let suggestions = realized.into_iter().collect::<Result<Vec<_>>>()?;
    let mut retired = b.retired.clone();
    retired.extend(b.suggestions.iter().cloned());
    session.append_event(EventBody::SuggestionsRefined {
        block_id: block.clone(),
        action: RefineAction::Crafted,
        suggestions: suggestions.clone(),
        retired,
        pool: Some(crafted.block_pool),
    })?;
    Ok(suggestions)
}

fn used_members(session: &Session, block: &BlockId) -> Result<BTreeSet<usize>> {
    let b = session.block(block)?;
    Ok(b.suggestions
        .iter()
        .chain(&b.retired)
        .filter_map(|s| s.pool_member)
        .collect())
}

/// Slot a refinement fills: the first deleted slot, else the least typical
/// active, non-bookmarked suggestion other than `keep`.
fn target_slot(suggestions: &[Suggestion], keep: Option<&SuggestionId>) -> Result<usize> {
    if let Some(i) = suggestions.iter().position(|s| s.state == SuggestionState::Deleted) {
        return Ok(i);
    }
    suggestions
        .iter()
        .enumerate()
        .filter(|(_, s)| s.state == SuggestionState::Active && Some(&s.id) != keep)
        .min_by(|(_, a), (_, b)| a.similarity_to_input.total_cmp(&b.similarity_to_input))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Conflict("no replaceable suggestion slot (all bookmarked)".into()))
}

/// Delete, bookmark (toggle) or replace a suggestion using the block's pool.
///
/// `similar`/`distant` put the unused pool member with the highest/lowest
/// cluster-space cosine to the anchor into the target slot; `more` takes
/// the unused member nearest the centroid of the least represented cluster.
pub fn refine_suggestions(
    gw: &ProviderGateway,
    session: &mut Session,
    block: &BlockId,
    action: RefineAction,
    anchor: Option<&SuggestionId>,
) -> Result<Vec<Suggestion>> {
    let b = session.block(block)?.clone();
    let anchor_idx = match (action, anchor) {
        (RefineAction::More, _) => None,
        (RefineAction::Crafted, _) => return Err(Error::Validation("use craft to re-craft a block".into())),
        (_, Some(a)) => Some(
            b.suggestions
                .iter()
                .position(|s| &s.id == a)
                .ok_or_else(|| Error::NotFound(format!("suggestion {a} in block {block}")))?,
        ),
        (_, None) => return Err(Error::Validation(format!("{action:?} needs an anchor suggestion"))),
    };
    let mut suggestions = b.suggestions.clone();
    let mut retired = b.retired.clone();
    match action {
        RefineAction::Delete => {
            let s = &mut suggestions[anchor_idx.expect("anchored")];
            if s.state == SuggestionState::Deleted {
                return Err(Error::Conflict(format!("suggestion {} already deleted", s.id)));
            }
            s.state = SuggestionState::Deleted;
        }
        RefineAction::Bookmark => {
            let s = &mut suggestions[anchor_idx.expect("anchored")];
            s.state = match s.state {
                SuggestionState::Active => SuggestionState::Bookmarked,
                SuggestionState::Bookmarked => SuggestionState::Active,
                SuggestionState::Deleted => {
                    return Err(Error::Conflict(format!("suggestion {} is deleted", s.id)));
                }
            };
        }
        RefineAction::Similar | RefineAction::Distant | RefineAction::More => {
            let pool = session
                .pool(block)
                .ok_or_else(|| Error::Conflict(format!("block {block} has no suggestion pool; craft it first")))?
                .clone();
            let used = used_members(session, block)?;
            let unused: Vec<usize> = (0..pool.members.len()).filter(|i| !used.contains(i)).collect();
            if unused.is_empty() {
                return Err(Error::PoolExhausted(block.to_string()));
            }
            let pick = match action {
                RefineAction::More => {
                    let mut counts = vec![0usize; pool.centroids.len()];
                    for s in suggestions.iter().filter(|s| s.is_visible()) {
                        if let Some(m) = s.pool_member {
                            counts[pool.labels[m]] += 1;
                        }
                    }
                    let cluster = (0..pool.centroids.len())
                        .filter(|c| unused.iter().any(|&i| pool.labels[i] == *c))
                        .min_by_key(|&c| (counts[c], c))
                        .expect("some unused member has a cluster");
                    let centroid = &pool.centroids[cluster];
                    *unused
                        .iter()
                        .filter(|&&i| pool.labels[i] == cluster)
                        .min_by(|&&a, &&b| {
                            let da = numeric::squared_distance(&numeric::normalized(&pool.members[a].embedding), centroid);
                            let db = numeric::squared_distance(&numeric::normalized(&pool.members[b].embedding), centroid);
                            da.total_cmp(&db).then(a.cmp(&b))
                        })
                        .expect("cluster has unused members")
                }
                _ => {
                    let anchor_s = &suggestions[anchor_idx.expect("anchored")];
                    let anchor_emb = anchor_s
                        .pool_member
                        .map(|m| pool.members[m].embedding.clone())
                        .ok_or_else(|| Error::Validation(format!("suggestion {} has no pool member", anchor_s.id)))?;
                    let sims: Vec<(usize, f64)> = unused
                        .iter()
                        .map(|&i| Ok((i, numeric::cosine(&anchor_emb, &pool.members[i].embedding).map_err(|e| Error::Validation(e.to_string()))?)))
                        .collect::<Result<_>>()?;
                    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0));
                    let best = if action == RefineAction::Similar {
                        sims.iter().copied().max_by(cmp)
                    } else {
                        sims.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                    };
                    best.expect("unused is nonempty").0
                }
            };
            let slot = if action == RefineAction::More && suggestions.len() < REPRESENTATIVES && !suggestions.iter().any(|s| s.state == SuggestionState::Deleted) {
                suggestions.len()
            } else {
                target_slot(&suggestions, anchor)?
            };
            let fresh = to_suggestion(gw, b.next_suggestion_id(0), &pool.members[pick], pick)?;
            if slot == suggestions.len() {
                suggestions.push(fresh);
            } else {
                let old = std::mem::replace(&mut suggestions[slot], fresh);
                retired.push(old);
            }
        }
        RefineAction::Crafted => unreachable!("rejected above"),
    }
    session.append_event(EventBody::SuggestionsRefined {
        block_id: block.clone(),
        action,
        suggestions: suggestions.clone(),
        retired,
        pool: None,
    })?;
    Ok(suggestions)
}

/// JSON debugging view of a pool.
pub fn pool_json(pool: &CandidatePool) -> Value {
    serde_json::to_value(pool).expect("pool serializes")
}
