//! Access to generative providers: structured chat completion, image-grounded
//! description and text-to-image generation.
//!
//! The gateway owns prompt rendering, JSON parsing, schema validation and the
//! bounded retry loop. Providers only move bytes.

pub mod live;
pub mod mock;
pub mod schema;
pub mod store;
pub mod templates;

use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use store::{DirImageStore, ImageStore, MemoryImageStore};
pub use templates::{PromptTemplate, TemplateId, TemplateSet};

/// Default number of attempts for structured completions.
pub const DEFAULT_ATTEMPTS: usize = 3;
/// Default bound on concurrent provider calls.
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRef {
    pub id: String,
    /// sha256 of the stored bytes, hex.
    pub hash: String,
    /// Location relative to the session directory.
    pub uri: String,
    pub width: u32,
    pub height: u32,
    pub media_type: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("response violated schema: {message}")]
    Schema { message: String, raw: String },
    #[error("request rejected by provider: {0}")]
    Rejected(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("image {0} cannot be resolved")]
    UnresolvableImage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttachedImage {
    pub image: ImageRef,
    pub bytes: Vec<u8>,
}

/// One outgoing chat call. `vars` are the template inputs (mock fixtures key
/// on them); `messages` are what a live provider actually receives.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub template: TemplateId,
    pub seed: u64,
    pub vars: Map<String, Value>,
    pub messages: Vec<ChatMessage>,
    pub image: Option<AttachedImage>,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    pub bytes: Vec<u8>,
    pub extension: String,
    pub media_type: String,
    pub width: u32,
    pub height: u32,
}

pub trait ImageGenerator: Send + Sync {
    fn generate(&self, prompt: &str, seed: u64) -> Result<GeneratedImage, ProviderError>;
}

fn strip_code_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphabetic());
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Parse and validate one raw reply.
pub fn parse_reply<R, V>(raw: &str, validate: V) -> Result<R, String>
where
    R: DeserializeOwned + Serialize + PartialEq,
    V: Fn(&R) -> Result<(), String>,
{
    let parsed: R = serde_json::from_str(strip_code_fence(raw)).map_err(|e| e.to_string())?;
    validate(&parsed)?;
    let round: R = serde_json::to_string(&parsed)
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .ok_or("reply does not round-trip")?;
    if round != parsed {
        return Err("reply does not round-trip".into());
    }
    Ok(parsed)
}

/// Provider access bound to one session's seed and image store.
#[derive(Clone)]
pub struct ProviderGateway {
    pub chat: Arc<dyn ChatProvider>,
    pub images: Arc<dyn ImageGenerator>,
    pub store: Arc<dyn ImageStore>,
    pub templates: Arc<TemplateSet>,
    pub attempts: usize,
    pub parallelism: usize,
    pub seed: u64,
}

impl ProviderGateway {
    pub fn new(
        chat: Arc<dyn ChatProvider>,
        images: Arc<dyn ImageGenerator>,
        store: Arc<dyn ImageStore>,
    ) -> Self {
        Self {
            chat,
            images,
            store,
            templates: Arc::new(TemplateSet::builtin()),
            attempts: DEFAULT_ATTEMPTS,
            parallelism: DEFAULT_PARALLELISM,
            seed: 0,
        }
    }

    /// Offline gateway: mock chat and image providers over an in-memory store.
    pub fn mock() -> Self {
        let mock = Arc::new(mock::MockProvider::new());
        Self::new(mock.clone(), mock, Arc::new(MemoryImageStore::default()))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_store(mut self, store: Arc<dyn ImageStore>) -> Self {
        self.store = store;
        self
    }

    fn build_request(
        &self,
        template: TemplateId,
        vars: Map<String, Value>,
        image: Option<AttachedImage>,
    ) -> Result<ChatRequest, ProviderError> {
        let tpl = self.templates.get(template);
        let (system, mut user) = tpl.render(&vars)?;
        // Inputs without a placeholder (e.g. `exclude` on re-requests) are
        // appended as constraints so live providers see them too.
        let used = tpl.placeholders();
        for (name, value) in vars.iter().filter(|(k, _)| !used.contains(*k)) {
            user.push_str(&format!("\n\nConstraint ({name}): {value}"));
        }
        Ok(ChatRequest {
            template,
            seed: self.seed,
            vars,
            messages: vec![ChatMessage::new(Role::System, system), ChatMessage::new(Role::User, user)],
            image,
        })
    }

    fn run_structured<R, V>(&self, mut request: ChatRequest, attempts: usize, validate: V) -> Result<R, ProviderError>
    where
        R: DeserializeOwned + Serialize + PartialEq,
        V: Fn(&R) -> Result<(), String>,
    {
        let attempts = attempts.max(1);
        let mut last = None;
        for attempt in 1..=attempts {
            let raw = self.chat.complete(&request)?;
            match parse_reply(&raw, &validate) {
                Ok(value) => return Ok(value),
                Err(message) => {
                    tracing::debug!(template = ?request.template, attempt, %message, "structured reply rejected");
                    request.messages.push(ChatMessage::new(Role::Assistant, raw.clone()));
                    request.messages.push(ChatMessage::new(
                        Role::User,
                        format!(
                            "Your previous reply was rejected: {message}. Reply again with valid JSON only, following the output format."
                        ),
                    ));
                    last = Some((message, raw));
                }
            }
        }
        let (message, raw) = last.expect("at least one attempt");
        Err(ProviderError::Schema { message, raw })
    }

    /// Render `template` with `vars`, call the chat provider and parse the
    /// reply into `R`. Rejected replies are retried (with the rejection
    /// appended to the conversation) up to `attempts` calls in total.
    pub fn complete_structured<R, V>(
        &self,
        template: TemplateId,
        vars: Map<String, Value>,
        attempts: usize,
        validate: V,
    ) -> Result<R, ProviderError>
    where
        R: DeserializeOwned + Serialize + PartialEq,
        V: Fn(&R) -> Result<(), String>,
    {
        let request = self.build_request(template, vars, None)?;
        self.run_structured(request, attempts, validate)
    }

    /// Like [`complete_structured`](Self::complete_structured) with an image
    /// attached to the request.
    pub fn describe_image<R, V>(
        &self,
        template: TemplateId,
        image: &ImageRef,
        vars: Map<String, Value>,
        validate: V,
    ) -> Result<R, ProviderError>
    where
        R: DeserializeOwned + Serialize + PartialEq,
        V: Fn(&R) -> Result<(), String>,
    {
        let bytes = self.store.get(image)?;
        let request = self.build_request(
            template,
            vars,
            Some(AttachedImage {
                image: image.clone(),
                bytes,
            }),
        )?;
        self.run_structured(request, self.attempts, validate)
    }

    /// One description paragraph per requested property, in request order.
    pub fn describe_properties(&self, image: &ImageRef, properties: &[String]) -> Result<Vec<(String, String)>, ProviderError> {
        if properties.is_empty() {
            return Err(ProviderError::Validation("property list must be nonempty".into()));
        }
        let mut vars = Map::new();
        vars.insert("property_list".into(), Value::from(properties.to_vec()));
        let reply: schema::DescriptionsReply =
            self.describe_image(TemplateId::HistoryExtract, image, vars, |r: &schema::DescriptionsReply| {
                r.validate_for(properties)
            })?;
        Ok(reply
            .descriptions
            .into_iter()
            .map(|d| (d.property, d.description))
            .collect())
    }

    /// Generate an image for `prompt` and store it.
    pub fn generate_image(&self, prompt: &str) -> Result<ImageRef, ProviderError> {
        if prompt.trim().is_empty() {
            return Err(ProviderError::Validation("image prompt must be nonempty".into()));
        }
        let generated = self.images.generate(prompt, self.seed)?;
        self.store.put(&generated)
    }
}

/// Build a `vars` map from `(name, value)` pairs.
pub fn vars<const N: usize>(pairs: [(&str, Value); N]) -> Map<String, Value> {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::mock::{MockProvider, ScriptedChat};
    use crate::provider::schema::{RecommendReply, VariationsReply};
    use serde_json::json;

    #[test]
    fn code_fences_are_stripped() {
        assert_eq!(strip_code_fence("```json\n{\"a\":1}\n```"), "{\"a\":1}");
        assert_eq!(strip_code_fence(" {\"a\":1} "), "{\"a\":1}");
    }

    #[test]
    fn diversify_fixture_through_gateway() {
        let gw = ProviderGateway::mock();
        let reply: VariationsReply = gw
            .complete_structured(
                TemplateId::DiversifyText,
                vars([("property", json!("Mascot Species")), ("direction", json!("Cat"))]),
                3,
                |_| Ok(()),
            )
            .unwrap();
        assert_eq!(
            reply.outputs.variations,
            ["Sphynx", "Persian", "Siamese", "Bengal", "Dog", "Parrot", "Dragon", "Kangaroo", "Turtle"]
        );
    }

    #[test]
    fn recommend_fixture_through_gateway() {
        let gw = ProviderGateway::mock();
        let reply: RecommendReply = gw
            .complete_structured(
                TemplateId::RecommendDirections,
                vars([
                    ("topic", json!("A professional character for a laboratory")),
                    ("property", json!("Image Style")),
                    ("history", json!([])),
                    ("settings", json!(["Character Entity: Robot"])),
                ]),
                3,
                |_| Ok(()),
            )
            .unwrap();
        assert_eq!(reply.typical, "Realistic");
        assert_eq!(reply.unique, "Steampunk");
    }

    #[test]
    fn schema_violation_is_retried_then_surfaced() {
        let scripted = Arc::new(ScriptedChat::new(Arc::new(MockProvider::new())));
        for _ in 0..3 {
            scripted.push_reply(TemplateId::DiversifyText, r#"{"outputs": {"wrong": []}}"#);
        }
        let mut gw = ProviderGateway::mock();
        gw.chat = scripted.clone();
        let err = gw
            .complete_structured::<VariationsReply, _>(
                TemplateId::DiversifyText,
                vars([("property", json!("Mascot Species")), ("direction", json!("Cat"))]),
                3,
                |_| Ok(()),
            )
            .unwrap_err();
        match err {
            ProviderError::Schema { raw, message } => {
                assert!(raw.contains("wrong"));
                assert!(message.contains("variations") || message.contains("unknown field"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let calls = scripted.calls();
        assert_eq!(calls.len(), 3);
        // each retry carries the rejection back to the provider
        assert_eq!(calls[2].messages.len(), 6);
        assert!(calls[1].messages[3].content.contains("rejected"));
    }

    #[test]
    fn retry_recovers_after_bad_reply() {
        let scripted = Arc::new(ScriptedChat::new(Arc::new(MockProvider::new())));
        scripted.push_reply(TemplateId::DiversifyText, "not json");
        let mut gw = ProviderGateway::mock();
        gw.chat = scripted.clone();
        let reply: VariationsReply = gw
            .complete_structured(
                TemplateId::DiversifyText,
                vars([("property", json!("Mascot Species")), ("direction", json!("Cat"))]),
                3,
                |_| Ok(()),
            )
            .unwrap();
        assert_eq!(reply.outputs.variations[0], "Sphynx");
        assert_eq!(scripted.calls().len(), 2);
    }

    #[test]
    fn missing_placeholder_is_a_validation_error() {
        let gw = ProviderGateway::mock();
        let err = gw
            .complete_structured::<VariationsReply, _>(
                TemplateId::DiversifyText,
                vars([("property", json!("Mascot Species"))]),
                3,
                |_| Ok(()),
            )
            .unwrap_err();
        assert!(matches!(err, ProviderError::Validation(_)));
    }

    #[test]
    fn generate_image_is_deterministic() {
        let gw = ProviderGateway::mock().with_seed(11);
        let a = gw.generate_image("a watercolor fox").unwrap();
        let b = gw.generate_image("a watercolor fox").unwrap();
        assert_eq!(a, b);
        let expected = mock::placeholder_svg("a watercolor fox", 11);
        assert_eq!(a.hash, store::content_hash(&expected));
        let other_seed = ProviderGateway::mock().with_seed(12).generate_image("a watercolor fox").unwrap();
        assert_ne!(a.hash, other_seed.hash);
        assert!(matches!(gw.generate_image("  "), Err(ProviderError::Validation(_))));
    }

    #[test]
    fn describe_properties_keys_on_image_and_vars() {
        let gw = ProviderGateway::mock().with_seed(1);
        let img = gw.generate_image("street musician fox").unwrap();
        let one = gw.describe_properties(&img, &["Image Style".into()]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].0, "Image Style");
        let key = mock::description_key(&img.hash, &json!(["Image Style"]));
        assert!(one[0].1.contains(&key));
        let two = gw
            .describe_properties(&img, &["Image Style".into(), "Background".into()])
            .unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[1].0, "Background");
        assert!(matches!(gw.describe_properties(&img, &[]), Err(ProviderError::Validation(_))));

        let ghost = ImageRef {
            hash: "00".repeat(32),
            ..img.clone()
        };
        assert!(matches!(
            gw.describe_properties(&ghost, &["Image Style".into()]),
            Err(ProviderError::UnresolvableImage(_))
        ));
    }
}
