//! Session state: properties, the block forest, results, pools and the
//! append-only event log.
//!
//! Every mutation goes through [`Session::append_event`], which validates the
//! payload against the current state and then applies it. Replaying a log
//! onto a fresh session from the same genesis reproduces the snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::provider::ImageRef;
use crate::suggest::BlockPool;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(SessionId);
id_type!(BlockId);
id_type!(SuggestionId);
id_type!(ResultId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    Text,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyOrigin {
    Suggested,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertySpec {
    pub name: String,
    pub kind: PropertyKind,
    pub origin: PropertyOrigin,
}

impl PropertySpec {
    pub fn new(name: impl Into<String>, kind: PropertyKind, origin: PropertyOrigin) -> Self {
        Self {
            name: name.into(),
            kind,
            origin,
        }
    }

    pub fn text(name: impl Into<String>) -> Self {
        Self::new(name, PropertyKind::Text, PropertyOrigin::Suggested)
    }

    pub fn image(name: impl Into<String>) -> Self {
        Self::new(name, PropertyKind::Image, PropertyOrigin::Suggested)
    }
}

/// Typicality level 1..=5; 1 is the most conventional, 5 the most divergent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Typicality(u8);

impl Typicality {
    pub const MIN: i64 = 1;
    pub const MAX: i64 = 5;

    pub fn new(level: i64) -> Result<Self> {
        if !(Self::MIN..=Self::MAX).contains(&level) {
            return Err(Error::Validation(format!(
                "typicality {level} outside [{}, {}]",
                Self::MIN,
                Self::MAX
            )));
        }
        Ok(Self(level as u8))
    }

    pub fn clamped(level: i64) -> Self {
        Self(level.clamp(Self::MIN, Self::MAX) as u8)
    }

    pub fn level(self) -> u8 {
        self.0
    }
}

impl TryFrom<i64> for Typicality {
    type Error = String;

    fn try_from(value: i64) -> std::result::Result<Self, String> {
        Typicality::new(value).map_err(|e| e.to_string())
    }
}

impl From<Typicality> for i64 {
    fn from(t: Typicality) -> i64 {
        t.0 as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionState {
    Active,
    Deleted,
    Bookmarked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SuggestionContent {
    Text { text: String },
    Image { prompt: String, image: ImageRef },
}

impl SuggestionContent {
    pub fn kind(&self) -> PropertyKind {
        match self {
            SuggestionContent::Text { .. } => PropertyKind::Text,
            SuggestionContent::Image { .. } => PropertyKind::Image,
        }
    }

    /// Text stand-in: the suggestion itself, or the prompt behind an image.
    pub fn label(&self) -> &str {
        match self {
            SuggestionContent::Text { text } => text,
            SuggestionContent::Image { prompt, .. } => prompt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suggestion {
    pub id: SuggestionId,
    pub content: SuggestionContent,
    pub source_direction: String,
    pub similarity_to_input: f64,
    pub state: SuggestionState,
    /// Index of the backing member in the block's pool.
    pub pool_member: Option<usize>,
}

impl Suggestion {
    pub fn is_visible(&self) -> bool {
        self.state != SuggestionState::Deleted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReuseMode {
    BlockCopy,
    PathLiteral,
    PathAdaptive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReuseOrigin {
    pub source_block_id: BlockId,
    pub mode: ReuseMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationBlock {
    pub id: BlockId,
    pub property: String,
    pub direction: String,
    pub typicality: Typicality,
    /// At most four slots; soft-deleted entries stay until a refinement
    /// replaces them.
    pub suggestions: Vec<Suggestion>,
    /// Suggestions displaced by refinement, kept so result items resolve.
    pub retired: Vec<Suggestion>,
    /// Block creation ordinal, 1-based and strictly increasing.
    pub created_at: u64,
    pub reuse_origin: Option<ReuseOrigin>,
    /// Parent-result suggestion whose image anchors history extraction.
    pub anchor_result_item: Option<SuggestionId>,
    /// Most thematically similar earlier block of the same property.
    pub evolution_parent: Option<BlockId>,
}

impl ExplorationBlock {
    pub fn active_suggestions(&self) -> impl Iterator<Item = &Suggestion> {
        self.suggestions.iter().filter(|s| s.is_visible())
    }

    pub fn find_suggestion(&self, id: &SuggestionId) -> Option<&Suggestion> {
        self.suggestions
            .iter()
            .chain(&self.retired)
            .find(|s| &s.id == id)
    }

    /// Next suggestion id, unique within the block.
    pub fn next_suggestion_id(&self, offset: usize) -> SuggestionId {
        let n = self.suggestions.len() + self.retired.len() + offset + 1;
        SuggestionId(format!("{}-s{n}", self.id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultItem {
    pub suggestion_id: SuggestionId,
    pub image: Option<ImageRef>,
    pub final_prompt: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultBlock {
    pub id: ResultId,
    pub parent_block_id: BlockId,
    pub created_at: u64,
    pub items: Vec<ResultItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub parent: BlockId,
    pub child: BlockId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineAction {
    Crafted,
    Delete,
    Similar,
    Distant,
    More,
    Bookmark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    BlockCreated,
    BlocksLinked,
    SuggestionsRefined,
    ImagesGenerated,
    BlockCopied,
    PathCopiedLiteral,
    PathCopiedAdaptive,
    DirectionRecommended,
    PropertyAdded,
    PropertyRemoved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    BlockCreated {
        block: ExplorationBlock,
    },
    BlocksLinked {
        parent: BlockId,
        child: BlockId,
    },
    SuggestionsRefined {
        block_id: BlockId,
        action: RefineAction,
        suggestions: Vec<Suggestion>,
        retired: Vec<Suggestion>,
        pool: Option<BlockPool>,
    },
    ImagesGenerated {
        result: ResultBlock,
    },
    BlockCopied {
        source: BlockId,
        block: ExplorationBlock,
        parent: Option<BlockId>,
    },
    PathCopiedLiteral {
        sources: Vec<BlockId>,
        blocks: Vec<ExplorationBlock>,
        parent: Option<BlockId>,
    },
    PathCopiedAdaptive {
        sources: Vec<BlockId>,
        blocks: Vec<ExplorationBlock>,
        parent: Option<BlockId>,
        variant: usize,
    },
    DirectionRecommended {
        property: String,
        context: Option<BlockId>,
        typical: String,
        unique: String,
    },
    PropertyAdded {
        property: PropertySpec,
    },
    PropertyRemoved {
        name: String,
    },
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::BlockCreated { .. } => EventKind::BlockCreated,
            EventBody::BlocksLinked { .. } => EventKind::BlocksLinked,
            EventBody::SuggestionsRefined { .. } => EventKind::SuggestionsRefined,
            EventBody::ImagesGenerated { .. } => EventKind::ImagesGenerated,
            EventBody::BlockCopied { .. } => EventKind::BlockCopied,
            EventBody::PathCopiedLiteral { .. } => EventKind::PathCopiedLiteral,
            EventBody::PathCopiedAdaptive { .. } => EventKind::PathCopiedAdaptive,
            EventBody::DirectionRecommended { .. } => EventKind::DirectionRecommended,
            EventBody::PropertyAdded { .. } => EventKind::PropertyAdded,
            EventBody::PropertyRemoved { .. } => EventKind::PropertyRemoved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Everything needed to rebuild a session from its event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionGenesis {
    pub id: SessionId,
    pub topic: String,
    pub properties: Vec<PropertySpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Session {
    id: SessionId,
    topic: String,
    seed: u64,
    properties: Vec<PropertySpec>,
    blocks: BTreeMap<BlockId, ExplorationBlock>,
    results: BTreeMap<ResultId, ResultBlock>,
    edges: BTreeSet<Edge>,
    pools: BTreeMap<BlockId, BlockPool>,
    events: Vec<Event>,
}

/// Parameters for [`Session::add_block`].
#[derive(Debug, Clone, Default)]
pub struct NewBlock {
    pub property: String,
    pub direction: String,
    pub typicality: i64,
    pub parent: Option<BlockId>,
    pub anchor_result_item: Option<SuggestionId>,
    pub evolution_parent: Option<BlockId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainImage {
    pub suggestion_id: SuggestionId,
    pub image: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainEntry {
    pub block_id: BlockId,
    pub property: String,
    pub kind: PropertyKind,
    pub direction: String,
    pub typicality: Typicality,
    /// Suggestions that are not deleted.
    pub suggestions: Vec<Suggestion>,
    pub anchor_result_item: Option<SuggestionId>,
    /// Images of the block's most recent result, in item order.
    pub images: Vec<ChainImage>,
}

/// Ancestors root-first, ending with the queried block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextChain {
    pub entries: Vec<ChainEntry>,
}

impl ContextChain {
    pub fn target(&self) -> &ChainEntry {
        self.entries.last().expect("chain is never empty")
    }

    pub fn ancestors(&self) -> &[ChainEntry] {
        &self.entries[..self.entries.len() - 1]
    }

    /// `"Property: direction"` for every ancestor, root first.
    pub fn settings(&self) -> Vec<String> {
        self.ancestors()
            .iter()
            .map(|e| format!("{}: {}", e.property, e.direction))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropertyAction {
    Add(PropertySpec),
    Remove(String),
}

fn validate_properties(properties: &[PropertySpec]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for p in properties {
        if p.name.trim().is_empty() {
            return Err(Error::Validation("property name must be nonempty".into()));
        }
        if !seen.insert(p.name.as_str()) {
            return Err(Error::Validation(format!("duplicate property name {:?}", p.name)));
        }
    }
    Ok(())
}

/// Deterministic session id from its creation inputs.
pub fn derive_session_id(topic: &str, seed: u64, ordinal: u64) -> SessionId {
    let mut h = Sha256::new();
    h.update(topic.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(ordinal.to_le_bytes());
    SessionId(format!("s-{}", &hex::encode(h.finalize())[..16]))
}

/// Start a session with an empty block graph and event log.
pub fn new_session(topic: &str, properties: Vec<PropertySpec>, seed: u64) -> Result<Session> {
    Session::from_genesis(SessionGenesis {
        id: derive_session_id(topic, seed, 0),
        topic: topic.to_owned(),
        properties,
        seed,
    })
}

impl Session {
    pub fn from_genesis(genesis: SessionGenesis) -> Result<Self> {
        if genesis.topic.trim().is_empty() {
            return Err(Error::Validation("topic must be nonempty".into()));
        }
        if genesis.properties.is_empty() {
            return Err(Error::Validation("at least one property required".into()));
        }
        validate_properties(&genesis.properties)?;
        Ok(Self {
            id: genesis.id,
            topic: genesis.topic,
            seed: genesis.seed,
            properties: genesis.properties,
            blocks: BTreeMap::new(),
            results: BTreeMap::new(),
            edges: BTreeSet::new(),
            pools: BTreeMap::new(),
            events: Vec::new(),
        })
    }

    /// Rebuild from genesis plus a full event log.
    pub fn replay(genesis: SessionGenesis, events: &[Event]) -> Result<Self> {
        let mut session = Self::from_genesis(genesis)?;
        for (i, event) in events.iter().enumerate() {
            if event.seq != i as u64 + 1 {
                return Err(Error::Validation(format!(
                    "event log gap: expected seq {}, found {}",
                    i + 1,
                    event.seq
                )));
            }
            session.append_event(event.body.clone())?;
        }
        Ok(session)
    }

    pub fn id(&self) -> &SessionId {
        &self.id
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn properties(&self) -> &[PropertySpec] {
        &self.properties
    }

    pub fn property(&self, name: &str) -> Option<&PropertySpec> {
        self.properties.iter().find(|p| p.name == name)
    }

    pub fn blocks(&self) -> &BTreeMap<BlockId, ExplorationBlock> {
        &self.blocks
    }

    pub fn block(&self, id: &BlockId) -> Result<&ExplorationBlock> {
        self.blocks
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("block {id}")))
    }

    /// Blocks in creation order.
    pub fn blocks_in_order(&self) -> Vec<&ExplorationBlock> {
        let mut blocks: Vec<_> = self.blocks.values().collect();
        blocks.sort_by_key(|b| b.created_at);
        blocks
    }

    pub fn results(&self) -> &BTreeMap<ResultId, ResultBlock> {
        &self.results
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn pool(&self, block: &BlockId) -> Option<&BlockPool> {
        self.pools.get(block)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    pub fn kind_of(&self, property: &str) -> Result<PropertyKind> {
        self.property(property)
            .map(|p| p.kind)
            .ok_or_else(|| Error::Validation(format!("unknown property {property:?}")))
    }

    pub fn parent_of(&self, block: &BlockId) -> Option<&BlockId> {
        self.edges.iter().find(|e| &e.child == block).map(|e| &e.parent)
    }

    pub fn children_of(&self, block: &BlockId) -> Vec<&BlockId> {
        self.edges
            .iter()
            .filter(|e| &e.parent == block)
            .map(|e| &e.child)
            .collect()
    }

    pub fn depth(&self, block: &BlockId) -> usize {
        let mut depth = 0;
        let mut cur = block;
        while let Some(p) = self.parent_of(cur) {
            depth += 1;
            cur = p;
        }
        depth
    }

    /// Most recent result block generated for `block`.
    pub fn latest_result(&self, block: &BlockId) -> Option<&ResultBlock> {
        self.results
            .values()
            .filter(|r| &r.parent_block_id == block)
            .max_by_key(|r| r.created_at)
    }

    pub fn next_block_ordinal(&self) -> u64 {
        self.blocks.len() as u64 + 1
    }

    pub fn next_block_id(&self, offset: u64) -> BlockId {
        BlockId(format!("b{}", self.next_block_ordinal() + offset))
    }

    pub fn next_result_id(&self) -> ResultId {
        ResultId(format!("r{}", self.results.len() + 1))
    }

    /// Canonical JSON snapshot: object keys sorted, no insignificant whitespace.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("session serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn block_uses_property(&self, name: &str) -> bool {
        self.blocks.values().any(|b| b.property == name)
    }

    /// Whether `parent -> child` keeps the graph a forest.
    fn check_link(&self, parent: &BlockId, child: &BlockId) -> Result<()> {
        self.block(parent)?;
        self.block(child)?;
        if parent == child {
            return Err(Error::Graph(format!("block {child} cannot be its own parent")));
        }
        if let Some(existing) = self.parent_of(child) {
            return Err(Error::Graph(format!(
                "block {child} already has parent {existing}; re-parenting is not allowed"
            )));
        }
        let mut cur = parent;
        while let Some(p) = self.parent_of(cur) {
            if p == child {
                return Err(Error::Graph(format!("linking {parent} -> {child} creates a cycle")));
            }
            cur = p;
        }
        Ok(())
    }

    /// Forest invariant: every endpoint exists, in-degree <= 1, no cycles.
    pub fn check_invariants(&self) -> Result<()> {
        let mut parents: BTreeMap<&BlockId, &BlockId> = BTreeMap::new();
        for e in &self.edges {
            if !self.blocks.contains_key(&e.parent) || !self.blocks.contains_key(&e.child) {
                return Err(Error::Graph(format!("dangling edge {} -> {}", e.parent, e.child)));
            }
            if parents.insert(&e.child, &e.parent).is_some() {
                return Err(Error::Graph(format!("block {} has two parents", e.child)));
            }
        }
        for start in self.blocks.keys() {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parents.get(cur) {
                steps += 1;
                if steps > self.blocks.len() {
                    return Err(Error::Graph(format!("cycle through {start}")));
                }
                cur = p;
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.seq != i as u64 + 1 {
                return Err(Error::Validation("event sequence has gaps".into()));
            }
        }
        Ok(())
    }

    fn validate_new_block(&self, block: &ExplorationBlock, expected_ordinal: u64) -> Result<()> {
        if self.blocks.contains_key(&block.id) {
            return Err(Error::Validation(format!("block {} already exists", block.id)));
        }
        if block.created_at != expected_ordinal {
            return Err(Error::Validation(format!(
                "block {} created_at {} out of order (expected {expected_ordinal})",
                block.id, block.created_at
            )));
        }
        self.kind_of(&block.property)?;
        if block.direction.trim().is_empty() {
            return Err(Error::Validation("direction must be nonempty".into()));
        }
        if !block.suggestions.is_empty() || !block.retired.is_empty() {
            return Err(Error::Validation("new blocks start without suggestions".into()));
        }
        if let Some(origin) = &block.reuse_origin {
            self.block(&origin.source_block_id)
                .map_err(|_| Error::Validation(format!("reuse source {} unknown", origin.source_block_id)))?;
        }
        if let Some(evo) = &block.evolution_parent {
            let parent = self
                .blocks
                .get(evo)
                .ok_or_else(|| Error::Validation(format!("evolution parent {evo} unknown")))?;
            if parent.property != block.property {
                return Err(Error::Validation(format!(
                    "evolution parent {evo} has property {:?}, block has {:?}",
                    parent.property, block.property
                )));
            }
        }
        Ok(())
    }

    fn validate_suggestions(&self, block_id: &BlockId, suggestions: &[Suggestion], retired: &[Suggestion]) -> Result<()> {
        let block = self
            .blocks
            .get(block_id)
            .ok_or_else(|| Error::Validation(format!("block {block_id} unknown")))?;
        let kind = self.kind_of(&block.property)?;
        if suggestions.len() > 4 {
            return Err(Error::Validation(format!(
                "block {block_id} would hold {} suggestions (max 4)",
                suggestions.len()
            )));
        }
        if let Some(bad) = suggestions.iter().chain(retired).find(|s| s.content.kind() != kind) {
            return Err(Error::Validation(format!(
                "suggestion {} kind does not match property {:?}",
                bad.id, block.property
            )));
        }
        let mut ids = BTreeSet::new();
        if let Some(dup) = suggestions.iter().chain(retired).find(|s| !ids.insert(&s.id)) {
            return Err(Error::Validation(format!("duplicate suggestion id {}", dup.id)));
        }
        Ok(())
    }

    fn validate_copy_chain(
        &self,
        sources: &[BlockId],
        blocks: &[ExplorationBlock],
        parent: Option<&BlockId>,
        mode: ReuseMode,
    ) -> Result<()> {
        if sources.is_empty() || sources.len() != blocks.len() {
            return Err(Error::Validation("copy needs one new block per source".into()));
        }
        if let Some(p) = parent {
            self.block(p)
                .map_err(|_| Error::Validation(format!("copy parent {p} unknown")))?;
        }
        let first = self.next_block_ordinal();
        for (i, (src, b)) in sources.iter().zip(blocks).enumerate() {
            self.block(src)
                .map_err(|_| Error::Validation(format!("copy source {src} unknown")))?;
            self.validate_new_block(b, first + i as u64)?;
            match &b.reuse_origin {
                Some(o) if &o.source_block_id == src && o.mode == mode => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "block {} must record reuse origin {src}",
                        b.id
                    )))
                }
            }
        }
        Ok(())
    }

    fn insert_chain(&mut self, blocks: Vec<ExplorationBlock>, parent: Option<BlockId>) {
        let mut prev = parent;
        for b in blocks {
            let id = b.id.clone();
            self.blocks.insert(id.clone(), b);
            if let Some(p) = prev {
                self.edges.insert(Edge {
                    parent: p,
                    child: id.clone(),
                });
            }
            prev = Some(id);
        }
    }

    /// Validate `body` against the current state, apply it and record it
    /// with the next sequence number.
    pub fn append_event(&mut self, body: EventBody) -> Result<u64> {
        match &body {
            EventBody::BlockCreated { block } => {
                self.validate_new_block(block, self.next_block_ordinal())?;
            }
            EventBody::BlocksLinked { parent, child } => {
                if !self.blocks.contains_key(parent) || !self.blocks.contains_key(child) {
                    return Err(Error::Validation(format!("link {parent} -> {child} references unknown block")));
                }
                self.check_link(parent, child)?;
            }
            EventBody::SuggestionsRefined {
                block_id,
                suggestions,
                retired,
                pool,
                ..
            } => {
                self.validate_suggestions(block_id, suggestions, retired)?;
                if let Some(pool) = pool {
                    if pool.property != self.blocks[block_id].property {
                        return Err(Error::Validation("pool property does not match block".into()));
                    }
                }
                if let Some(idx) = suggestions
                    .iter()
                    .filter_map(|s| s.pool_member)
                    .find(|i| {
                        pool.as_ref()
                            .or(self.pools.get(block_id))
                            .is_none_or(|p| *i >= p.members.len())
                    })
                {
                    return Err(Error::Validation(format!("pool member {idx} out of range")));
                }
            }
            EventBody::ImagesGenerated { result } => {
                let block = self
                    .blocks
                    .get(&result.parent_block_id)
                    .ok_or_else(|| Error::Validation(format!("result parent {} unknown", result.parent_block_id)))?;
                if self.results.contains_key(&result.id) {
                    return Err(Error::Validation(format!("result {} already exists", result.id)));
                }
                if result.created_at != self.results.len() as u64 + 1 {
                    return Err(Error::Validation("result created_at out of order".into()));
                }
                if let Some(item) = result.items.iter().find(|i| block.find_suggestion(&i.suggestion_id).is_none()) {
                    return Err(Error::Validation(format!(
                        "result item references unknown suggestion {}",
                        item.suggestion_id
                    )));
                }
            }
            EventBody::BlockCopied { source, block, parent } => {
                self.validate_copy_chain(
                    std::slice::from_ref(source),
                    std::slice::from_ref(block),
                    parent.as_ref(),
                    ReuseMode::BlockCopy,
                )?;
            }
            EventBody::PathCopiedLiteral { sources, blocks, parent } => {
                self.validate_copy_chain(sources, blocks, parent.as_ref(), ReuseMode::PathLiteral)?;
            }
            EventBody::PathCopiedAdaptive {
                sources,
                blocks,
                parent,
                ..
            } => {
                self.validate_copy_chain(sources, blocks, parent.as_ref(), ReuseMode::PathAdaptive)?;
            }
            EventBody::DirectionRecommended { property, context, .. } => {
                self.kind_of(property)?;
                if let Some(c) = context {
                    self.block(c)
                        .map_err(|_| Error::Validation(format!("context block {c} unknown")))?;
                }
            }
            EventBody::PropertyAdded { property } => {
                let mut all = self.properties.clone();
                all.push(property.clone());
                validate_properties(&all)?;
            }
            EventBody::PropertyRemoved { name } => {
                if self.property(name).is_none() {
                    return Err(Error::NotFound(format!("property {name:?}")));
                }
                if self.block_uses_property(name) {
                    return Err(Error::Conflict(format!("property {name:?} is used by a block")));
                }
            }
        }

        match body.clone() {
            EventBody::BlockCreated { block } => {
                self.blocks.insert(block.id.clone(), block);
            }
            EventBody::BlocksLinked { parent, child } => {
                self.edges.insert(Edge { parent, child });
            }
            EventBody::SuggestionsRefined {
                block_id,
                suggestions,
                retired,
                pool,
                ..
            } => {
                if let Some(pool) = pool {
                    self.pools.insert(block_id.clone(), pool);
                }
                let block = self.blocks.get_mut(&block_id).expect("validated");
                block.suggestions = suggestions;
                block.retired = retired;
            }
            EventBody::ImagesGenerated { result } => {
                self.results.insert(result.id.clone(), result);
            }
            EventBody::BlockCopied { block, parent, .. } => {
                self.insert_chain(vec![block], parent);
            }
            EventBody::PathCopiedLiteral { blocks, parent, .. } | EventBody::PathCopiedAdaptive { blocks, parent, .. } => {
                self.insert_chain(blocks, parent);
            }
            EventBody::DirectionRecommended { .. } => {}
            EventBody::PropertyAdded { property } => self.properties.push(property),
            EventBody::PropertyRemoved { name } => self.properties.retain(|p| p.name != name),
        }

        let seq = self.last_seq() + 1;
        self.events.push(Event { seq, body });
        debug_assert!(self.check_invariants().is_ok());
        Ok(seq)
    }

    /// Create a block (and its parent edge) with empty suggestions.
    pub fn add_block(&mut self, spec: NewBlock) -> Result<BlockId> {
        let typicality = Typicality::new(spec.typicality)?;
        self.kind_of(&spec.property)?;
        if spec.direction.trim().is_empty() {
            return Err(Error::Validation("direction must be nonempty".into()));
        }
        if let Some(parent) = &spec.parent {
            self.block(parent)?;
        }
        if let (Some(anchor), Some(parent)) = (&spec.anchor_result_item, &spec.parent) {
            if self.block(parent)?.find_suggestion(anchor).is_none() {
                return Err(Error::Validation(format!("anchor {anchor} is not a suggestion of {parent}")));
            }
        }
        let id = self.next_block_id(0);
        let block = ExplorationBlock {
            id: id.clone(),
            property: spec.property,
            direction: spec.direction.trim().to_owned(),
            typicality,
            suggestions: Vec::new(),
            retired: Vec::new(),
            created_at: self.next_block_ordinal(),
            reuse_origin: None,
            anchor_result_item: spec.anchor_result_item,
            evolution_parent: spec.evolution_parent,
        };
        self.append_event(EventBody::BlockCreated { block })?;
        if let Some(parent) = spec.parent {
            self.append_event(EventBody::BlocksLinked {
                parent,
                child: id.clone(),
            })?;
        }
        Ok(id)
    }

    /// Link two existing blocks.
    pub fn link_blocks(&mut self, parent: &BlockId, child: &BlockId) -> Result<u64> {
        self.block(parent)?;
        self.block(child)?;
        self.check_link(parent, child)?;
        self.append_event(EventBody::BlocksLinked {
            parent: parent.clone(),
            child: child.clone(),
        })
    }

    pub fn mutate_properties(&mut self, action: PropertyAction) -> Result<&[PropertySpec]> {
        match action {
            PropertyAction::Add(spec) => self.append_event(EventBody::PropertyAdded { property: spec })?,
            PropertyAction::Remove(name) => self.append_event(EventBody::PropertyRemoved { name })?,
        };
        Ok(&self.properties)
    }

    /// Root-first ancestor chain ending with `block`.
    pub fn chain_context(&self, block: &BlockId) -> Result<ContextChain> {
        self.block(block)?;
        let mut ids = vec![block.clone()];
        let mut cur = block;
        while let Some(p) = self.parent_of(cur) {
            ids.push(p.clone());
            cur = p;
        }
        ids.reverse();
        let entries = ids
            .iter()
            .map(|id| {
                let b = &self.blocks[id];
                let images = self
                    .latest_result(id)
                    .map(|r| {
                        r.items
                            .iter()
                            .filter_map(|item| {
                                item.image.clone().map(|image| ChainImage {
                                    suggestion_id: item.suggestion_id.clone(),
                                    image,
                                })
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                Ok(ChainEntry {
                    block_id: id.clone(),
                    property: b.property.clone(),
                    kind: self.kind_of(&b.property)?,
                    direction: b.direction.clone(),
                    typicality: b.typicality,
                    suggestions: b.active_suggestions().cloned().collect(),
                    anchor_result_item: b.anchor_result_item.clone(),
                    images,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ContextChain { entries })
    }

    pub fn genesis(&self, initial_properties: Vec<PropertySpec>) -> SessionGenesis {
        SessionGenesis {
            id: self.id.clone(),
            topic: self.topic.clone(),
            properties: initial_properties,
            seed: self.seed,
        }
    }
}
