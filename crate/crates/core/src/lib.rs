//! Exploration-block engine.
//!
//! A session holds exploration blocks (property, direction keyword,
//! typicality level 1–5) chained into a forest. For each block the engine
//! diversifies the direction, expands a candidate pool, keeps the slice
//! matching the requested typicality and presents four diverse
//! representatives; result images are composed with the chain's history.
//! Blocks and paths can be reused literally or adapted, and sessions are
//! analysed as linkographs.
//!
//! Numeric kernels in [`numeric`] are generic over [`Scalar`]; the domain
//! layer uses the `f64` aliases below.

pub mod analytics;
pub mod embedding;
pub mod error;
pub mod generate;
pub mod model;
pub mod numeric;
pub mod parallel;
pub mod provider;
pub mod reuse;
pub mod suggest;

use std::sync::Arc;

pub use error::{Error, Result, Stage};
pub use model::{
    BlockId, ContextChain, Event, EventBody, EventKind, ExplorationBlock, NewBlock, PropertyAction, PropertyKind,
    PropertyOrigin, PropertySpec, RefineAction, ResultBlock, ResultId, Session, SessionGenesis, SessionId, Suggestion,
    SuggestionId, Typicality,
};
pub use numeric::Scalar;
pub use provider::{ImageRef, ProviderGateway};
pub use suggest::ImageMode;

pub type Embedding = embedding::EmbeddingVector<f64>;
pub type WordVectors = embedding::WordVectors<f64>;
pub type KMeansFit = numeric::KMeansFit<f64>;
pub type MetricsReport = analytics::MetricsReport<f64>;

/// Providers, embedders and pipeline settings, shared by every session.
#[derive(Clone)]
pub struct Engine {
    pub providers: ProviderGateway,
    pub embeddings: embedding::EmbeddingGateway,
    pub image_mode: ImageMode,
}

impl Engine {
    /// Offline engine over the mock providers.
    pub fn mock(words: Option<Arc<WordVectors>>) -> Self {
        Self {
            providers: ProviderGateway::mock(),
            embeddings: embedding::EmbeddingGateway::mock(words),
            image_mode: ImageMode::Economy,
        }
    }

    /// Same engine writing images to `store`.
    pub fn with_store(&self, store: Arc<dyn provider::ImageStore>) -> Self {
        let mut e = self.clone();
        e.providers = e.providers.with_store(store);
        e
    }

    /// Gateway seeded for `session`.
    pub fn gateway(&self, session: &Session) -> ProviderGateway {
        self.providers.clone().with_seed(session.seed())
    }

    /// New session with eight suggested properties. Returns the genesis the
    /// event log replays from.
    pub fn create_session(&self, topic: &str, seed: u64, ordinal: u64) -> Result<(Session, SessionGenesis)> {
        let gw = self.providers.clone().with_seed(seed);
        let properties = suggest::generate_properties(&gw, topic)?;
        let genesis = SessionGenesis {
            id: model::derive_session_id(topic, seed, ordinal),
            topic: topic.to_owned(),
            properties,
            seed,
        };
        Ok((Session::from_genesis(genesis.clone())?, genesis))
    }

    /// Add a block (linked into its property's evolution graph) and craft
    /// its suggestions.
    pub fn create_block(&self, session: &mut Session, mut spec: NewBlock) -> Result<BlockId> {
        session.kind_of(&spec.property)?;
        Typicality::new(spec.typicality)?;
        if spec.direction.trim().is_empty() {
            return Err(Error::Validation("direction must be nonempty".into()));
        }
        if spec.evolution_parent.is_none() {
            spec.evolution_parent = reuse::organize_history(&self.gateway(session), session, &spec.property, &spec.direction)?;
        }
        let id = session.add_block(spec)?;
        self.craft(session, &id)?;
        Ok(id)
    }

    pub fn craft(&self, session: &mut Session, block: &BlockId) -> Result<Vec<Suggestion>> {
        suggest::craft_suggestions(&self.gateway(session), &self.embeddings, session, block, self.image_mode)
    }

    pub fn refine(
        &self,
        session: &mut Session,
        block: &BlockId,
        action: RefineAction,
        anchor: Option<&SuggestionId>,
    ) -> Result<Vec<Suggestion>> {
        suggest::refine_suggestions(&self.gateway(session), session, block, action, anchor)
    }

    pub fn realize(&self, session: &mut Session, block: &BlockId) -> Result<ResultBlock> {
        generate::realize_results(&self.gateway(session), session, block, self.image_mode)
    }

    /// Craft and realize each block in order.
    pub fn continue_blocks(&self, session: &mut Session, blocks: &[BlockId]) -> Result<()> {
        for b in blocks {
            self.craft(session, b)?;
            self.realize(session, b)?;
        }
        Ok(())
    }

    pub fn copy_block(&self, session: &mut Session, source: &BlockId, parent: Option<&BlockId>) -> Result<BlockId> {
        let id = reuse::copy_block(session, source, parent)?;
        self.craft(session, &id)?;
        Ok(id)
    }

    pub fn copy_path_literal(&self, session: &mut Session, path: &[BlockId], parent: Option<&BlockId>) -> Result<Vec<BlockId>> {
        let ids = reuse::copy_path_literal(session, path, parent)?;
        self.continue_blocks(session, &ids)?;
        Ok(ids)
    }

    pub fn adaptive_menu(&self, session: &Session, path: &[BlockId], parent: Option<&BlockId>) -> Result<reuse::PathMenu> {
        reuse::adaptive_variants(&self.gateway(session), session, path, parent)
    }

    /// Instantiate variant `choice` (1..=3) of `menu` and continue it.
    pub fn apply_adaptive(
        &self,
        session: &mut Session,
        path: &[BlockId],
        parent: Option<&BlockId>,
        menu: &reuse::PathMenu,
        choice: usize,
    ) -> Result<Vec<BlockId>> {
        let steps = menu
            .variants
            .get(choice.wrapping_sub(1))
            .ok_or_else(|| Error::Validation(format!("variant {choice} does not exist (1..=3)")))?;
        let ids = reuse::apply_path_template(session, path, parent, steps, choice)?;
        self.continue_blocks(session, &ids)?;
        Ok(ids)
    }

    pub fn recommend(&self, session: &mut Session, property: &str, context: Option<&BlockId>) -> Result<reuse::Recommendation> {
        reuse::recommend_directions(&self.gateway(session), session, property, context)
    }
}
