#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use intent_canvas::embedding::EmbeddingGateway;
use intent_canvas::provider::mock::{MockProvider, ScriptedChat, ScriptedImages};
use intent_canvas::provider::{MemoryImageStore, ProviderGateway};
use intent_canvas::{BlockId, Engine, ImageMode, NewBlock, PropertySpec, Session, WordVectors};

pub const TOPIC: &str = "A mascot for a summer night urban film festival";

pub fn toy_vectors() -> Arc<WordVectors> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy_vectors.txt");
    Arc::new(WordVectors::load(&path).expect("toy table loads"))
}

/// Mock engine whose chat and image calls are recorded and scriptable.
pub struct Harness {
    pub engine: Engine,
    pub chat: Arc<ScriptedChat>,
    pub images: Arc<ScriptedImages>,
    pub store: Arc<MemoryImageStore>,
}

impl Harness {
    pub fn new(mode: ImageMode) -> Self {
        let mock = Arc::new(MockProvider::new());
        let chat = Arc::new(ScriptedChat::new(mock.clone()));
        let images = Arc::new(ScriptedImages::new(mock));
        let store = Arc::new(MemoryImageStore::default());
        let providers = ProviderGateway::new(chat.clone(), images.clone(), store.clone());
        let engine = Engine {
            providers,
            embeddings: EmbeddingGateway::mock(Some(toy_vectors())),
            image_mode: mode,
        };
        Self { engine, chat, images, store }
    }

    pub fn gateway(&self, seed: u64) -> ProviderGateway {
        self.engine.providers.clone().with_seed(seed)
    }

    /// Session with one text and one image property.
    pub fn session(&self, seed: u64) -> Session {
        intent_canvas::model::new_session(
            TOPIC,
            vec![
                PropertySpec::text("Mascot's Entity"),
                PropertySpec::image("Image Style"),
                PropertySpec::text("Background"),
                PropertySpec::text("Color Scheme"),
            ],
            seed,
        )
        .expect("valid session")
    }

    pub fn block(&self, s: &mut Session, property: &str, direction: &str, typicality: i64, parent: Option<&BlockId>) -> BlockId {
        self.engine
            .create_block(
                s,
                NewBlock {
                    property: property.into(),
                    direction: direction.into(),
                    typicality,
                    parent: parent.cloned(),
                    ..Default::default()
                },
            )
            .expect("block crafted")
    }
}
