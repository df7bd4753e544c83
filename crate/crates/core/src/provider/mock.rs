//! Deterministic offline providers.
//!
//! [`MockProvider`] answers every template: exact fixture replies for the
//! worked examples shipped with the prompts, and a hash-seeded fallback for
//! anything else. Output is a pure function of (template, vars, seed), or of
//! (prompt, seed) for images.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::schema::PathStep;
use super::{ChatProvider, ChatRequest, GeneratedImage, ImageGenerator, ProviderError, TemplateId};

const FIXTURES: &str = include_str!("../../fixtures/appendix.json");

const PROPERTY_POOL: &[&str] = &[
    "Pose",
    "Facial Expression",
    "Background Setting",
    "Clothing",
    "Accessories",
    "Mood",
    "Composition",
    "Props",
    "Typography",
    "Time of Day",
    "Lighting",
];

const SUBTYPE_WORDS: &[&str] = &[
    "Classic", "Modern", "Minimal", "Ornate", "Playful", "Elegant", "Rustic", "Vivid", "Soft", "Bold",
];

const THEMES: &[&str] = &[
    "Steampunk", "Ocean", "Forest", "Desert", "Cosmic", "Candy", "Origami", "Neon", "Medieval", "Tropical", "Arctic",
    "Clockwork", "Botanical", "Crystal", "Volcanic", "Circus", "Jazz", "Robotic", "Folk", "Baroque",
];

const DETAIL_NOUNS: &[&str] = &[
    "Motif", "Silhouette", "Pattern", "Accent", "Texture", "Emblem", "Outline", "Detail", "Ornament", "Flourish",
    "Trim", "Glow", "Stripe", "Badge", "Sketch",
];

const SCENES: &[&str] = &[
    "A {} illustration of a quiet harbor",
    "{} textures on a still life of fruit",
    "Portrait of a traveler in {} style",
    "Rolling hills at dusk rendered {}",
    "Close-up pattern study in {} tones",
    "Isometric city block with a {} look",
    "Character study with {} shading",
];

const TYPICAL_WORDS: &[&str] = &["Classic", "Modern", "Realistic", "Minimal", "Warm", "Natural", "Soft", "Bold"];

#[derive(Deserialize)]
struct Fixture {
    template: TemplateId,
    vars: Map<String, Value>,
    reply: Value,
}

pub fn canonical_vars(vars: &Map<String, Value>) -> String {
    // serde_json's default map is ordered, so this is key-sorted.
    serde_json::to_string(vars).expect("vars serialize")
}

fn seeded_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn xml_unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&amp;", "&")
}

/// SVG placeholder for `prompt`; the prompt is kept in `<desc>`.
pub fn placeholder_svg(prompt: &str, seed: u64) -> Vec<u8> {
    let mut rng = seeded_rng(&[b"image", &seed.to_le_bytes(), prompt.as_bytes()]);
    let bg: u32 = rng.random_range(0..0x0100_0000);
    let fg: u32 = rng.random_range(0..0x0100_0000);
    let (cx, cy, r) = (rng.random_range(48..208), rng.random_range(48..208), rng.random_range(16..64));
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"256\" height=\"256\" viewBox=\"0 0 256 256\">\
<desc>{}</desc><rect width=\"256\" height=\"256\" fill=\"#{bg:06x}\"/>\
<circle cx=\"{cx}\" cy=\"{cy}\" r=\"{r}\" fill=\"#{fg:06x}\"/></svg>",
        xml_escape(prompt)
    )
    .into_bytes()
}

/// Prompt embedded in a placeholder image, if `bytes` is one.
pub fn svg_prompt(bytes: &[u8]) -> Option<String> {
    let s = std::str::from_utf8(bytes).ok()?;
    let start = s.find("<desc>")? + "<desc>".len();
    let end = start + s[start..].find("</desc>")?;
    Some(xml_unescape(&s[start..end]))
}

/// Key the mock embeds in image descriptions: depends on the image and the
/// requested property list only.
pub fn description_key(image_hash: &str, property_list: &Value) -> String {
    let mut h = Sha256::new();
    h.update(image_hash.as_bytes());
    h.update(b"\0");
    h.update(serde_json::to_string(property_list).expect("json").as_bytes());
    hex::encode(h.finalize())[..12].to_owned()
}

fn str_var<'a>(vars: &'a Map<String, Value>, key: &str) -> &'a str {
    vars.get(key).and_then(Value::as_str).unwrap_or("")
}

fn str_list(vars: &Map<String, Value>, key: &str) -> Vec<String> {
    vars.get(key)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_owned)).collect())
        .unwrap_or_default()
}

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| {
            let w = w.to_lowercase();
            match w.strip_suffix('s') {
                Some(stem) if stem.len() > 2 => stem.to_owned(),
                _ => w,
            }
        })
        .collect()
}

fn shuffled<'a>(items: &[&'a str], rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    let mut v = items.to_vec();
    v.shuffle(rng);
    v
}

#[derive(Debug)]
pub struct MockProvider {
    fixtures: HashMap<(TemplateId, String), Value>,
}

impl Default for MockProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl MockProvider {
    pub fn new() -> Self {
        let list: Vec<Fixture> = serde_json::from_str(FIXTURES).expect("fixture file parses");
        let fixtures = list
            .into_iter()
            .map(|f| ((f.template, canonical_vars(&f.vars)), f.reply))
            .collect();
        Self { fixtures }
    }

    /// The worked examples the mock answers verbatim.
    pub fn fixtures() -> Vec<(TemplateId, Map<String, Value>, Value)> {
        let list: Vec<Fixture> = serde_json::from_str(FIXTURES).expect("fixture file parses");
        list.into_iter().map(|f| (f.template, f.vars, f.reply)).collect()
    }

    fn fallback(&self, request: &ChatRequest) -> Value {
        let vars = &request.vars;
        let canonical = canonical_vars(vars);
        let mut rng = seeded_rng(&[
            request.template.as_str().as_bytes(),
            canonical.as_bytes(),
            &request.seed.to_le_bytes(),
        ]);
        match request.template {
            TemplateId::Properties => {
                let mut picked = shuffled(PROPERTY_POOL, &mut rng);
                picked.truncate(6);
                let mut outputs = vec![json!({"property_name": "Main Subject", "property_type": "text"})];
                outputs.extend(picked.iter().map(|p| json!({"property_name": p, "property_type": "text"})));
                let at = rng.random_range(2..=outputs.len());
                outputs.insert(at, json!({"property_name": "Image Style", "property_type": "image"}));
                json!({ "outputs": outputs })
            }
            TemplateId::DiversifyText | TemplateId::DiversifyImage => {
                let direction = str_var(vars, "direction");
                let mut taken: Vec<String> = str_list(vars, "exclude").iter().map(|s| s.to_lowercase()).collect();
                taken.push(direction.to_lowercase());
                let mut out = Vec::new();
                for adj in shuffled(SUBTYPE_WORDS, &mut rng) {
                    let v = format!("{adj} {direction}");
                    if out.len() < 4 && !taken.contains(&v.to_lowercase()) {
                        taken.push(v.to_lowercase());
                        out.push(v);
                    }
                }
                for theme in shuffled(THEMES, &mut rng) {
                    if out.len() < 9 && !taken.contains(&theme.to_lowercase()) {
                        taken.push(theme.to_lowercase());
                        out.push(theme.to_owned());
                    }
                }
                json!({"outputs": {"variations": out}})
            }
            TemplateId::CandidatesText => {
                let direction = str_var(vars, "direction");
                let out: Vec<String> = shuffled(DETAIL_NOUNS, &mut rng)
                    .into_iter()
                    .take(10)
                    .map(|n| format!("{direction} {n}"))
                    .collect();
                json!({"outputs": {"literal_variations": out}})
            }
            TemplateId::CandidatesImage => {
                let concept = str_var(vars, "property_value");
                let out: Vec<String> = shuffled(SCENES, &mut rng)
                    .into_iter()
                    .take(5)
                    .map(|s| s.replacen("{}", concept, 1))
                    .collect();
                json!({"outputs": {"prompts": out}})
            }
            TemplateId::HistoryExtract => {
                let list = vars.get("property_list").cloned().unwrap_or(Value::Null);
                let (subject, key) = match &request.image {
                    Some(img) => (
                        svg_prompt(&img.bytes).unwrap_or_else(|| format!("image {}", img.image.id)),
                        description_key(&img.image.hash, &list),
                    ),
                    None => ("no image".to_owned(), description_key("", &list)),
                };
                let descriptions: Vec<Value> = str_list(vars, "property_list")
                    .into_iter()
                    .map(|p| json!({"property": p, "description": format!("{p} as seen in: {subject} [ref {key}]")}))
                    .collect();
                json!({ "descriptions": descriptions })
            }
            TemplateId::PromptCompose => {
                let current = str_var(vars, "current_property_caption_text");
                let prev = str_var(vars, "prev_properties_caption_text");
                let prompt = if prev.trim().is_empty() {
                    format!("[Most recent] {current}")
                } else {
                    format!("[Most recent] {current} [Remaining] {prev}")
                };
                json!({ "prompt": prompt })
            }
            TemplateId::OrganizeHistory => {
                let new_words = words(str_var(vars, "new_log"));
                let mut best: Option<(usize, String)> = None;
                for log in vars.get("logs").and_then(Value::as_array).into_iter().flatten() {
                    let (Some(id), Some(dir)) = (
                        log.get("id").and_then(Value::as_str),
                        log.get("direction").and_then(Value::as_str),
                    ) else {
                        continue;
                    };
                    let overlap = words(dir).iter().filter(|w| new_words.contains(w)).count();
                    // later logs win ties
                    if overlap > 0 && best.as_ref().is_none_or(|(b, _)| overlap >= *b) {
                        best = Some((overlap, id.to_owned()));
                    }
                }
                json!({ "id": best.map(|(_, id)| id) })
            }
            TemplateId::AdaptivePath => {
                let steps: Vec<PathStep> = vars
                    .get("replication")
                    .cloned()
                    .and_then(|v| serde_json::from_value(v).ok())
                    .unwrap_or_default();
                let anchor = vars
                    .get("pre_explored")
                    .and_then(Value::as_array)
                    .and_then(|a| a.first())
                    .and_then(|p| p.get("direction"))
                    .and_then(Value::as_str)
                    .and_then(|d| d.split_whitespace().next())
                    .map(str::to_owned)
                    .unwrap_or_else(|| THEMES[rng.random_range(0..THEMES.len())].to_owned());
                let adj = SUBTYPE_WORDS[rng.random_range(0..SUBTYPE_WORDS.len())];
                let variant = |f: &dyn Fn(&PathStep) -> (String, i64)| -> Vec<PathStep> {
                    steps
                        .iter()
                        .map(|s| {
                            let (direction, novelty) = f(s);
                            PathStep {
                                direction,
                                novelty,
                                ..s.clone()
                            }
                        })
                        .collect()
                };
                let v1 = variant(&|s| (s.direction.clone(), s.novelty));
                let v2 = variant(&|s| (format!("{adj} {}", s.direction), s.novelty));
                let v3 = variant(&|s| (format!("{anchor} {}", s.direction), (s.novelty + 1).min(5)));
                json!([v1, v2, v3])
            }
            TemplateId::RecommendDirections => {
                let history: Vec<String> = str_list(vars, "history").iter().map(|s| s.to_lowercase()).collect();
                let free = |w: &&str| !history.contains(&w.to_lowercase());
                let typical = shuffled(TYPICAL_WORDS, &mut rng).into_iter().find(free).unwrap_or("Refined");
                let unique = shuffled(THEMES, &mut rng)
                    .into_iter()
                    .find(|w| free(w) && *w != typical)
                    .unwrap_or("Unexpected");
                json!({"typical": typical, "unique": unique})
            }
        }
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let key = (request.template, canonical_vars(&request.vars));
        let reply = match self.fixtures.get(&key) {
            Some(v) => v.clone(),
            None => self.fallback(request),
        };
        Ok(serde_json::to_string(&reply).expect("json"))
    }
}

impl ImageGenerator for MockProvider {
    fn generate(&self, prompt: &str, seed: u64) -> Result<GeneratedImage, ProviderError> {
        Ok(GeneratedImage {
            bytes: placeholder_svg(prompt, seed),
            extension: "svg".into(),
            media_type: "image/svg+xml".into(),
            width: 256,
            height: 256,
        })
    }
}

struct ChatRule {
    template: TemplateId,
    when: Option<(String, Value)>,
    remaining: Option<usize>,
    reply: Result<String, ProviderError>,
}

/// Chat provider that serves scripted replies (or failures) before falling
/// through to an inner provider, recording every request it sees.
pub struct ScriptedChat {
    inner: std::sync::Arc<dyn ChatProvider>,
    rules: Mutex<Vec<ChatRule>>,
    calls: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChat {
    pub fn new(inner: std::sync::Arc<dyn ChatProvider>) -> Self {
        Self {
            inner,
            rules: Mutex::new(Vec::new()),
            calls: Mutex::new(Vec::new()),
        }
    }

    fn push(&self, rule: ChatRule) {
        self.rules.lock().expect("poisoned").push(rule);
    }

    /// Serve `raw` once for the next `template` call.
    pub fn push_reply(&self, template: TemplateId, raw: impl Into<String>) {
        self.push(ChatRule {
            template,
            when: None,
            remaining: Some(1),
            reply: Ok(raw.into()),
        });
    }

    /// Serve `raw` for `times` calls (None: forever) of `template` whose
    /// var `key` equals `value`.
    pub fn reply_when(&self, template: TemplateId, key: &str, value: Value, times: Option<usize>, raw: impl Into<String>) {
        self.push(ChatRule {
            template,
            when: Some((key.to_owned(), value)),
            remaining: times,
            reply: Ok(raw.into()),
        });
    }

    /// Fail `times` calls (None: forever) of `template`, optionally only
    /// those whose var `key` equals `value`.
    pub fn fail_when(&self, template: TemplateId, when: Option<(&str, Value)>, times: Option<usize>, error: ProviderError) {
        self.push(ChatRule {
            template,
            when: when.map(|(k, v)| (k.to_owned(), v)),
            remaining: times,
            reply: Err(error),
        });
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().expect("poisoned").clone()
    }

    pub fn count(&self, template: TemplateId) -> usize {
        self.calls.lock().expect("poisoned").iter().filter(|c| c.template == template).count()
    }

    pub fn total(&self) -> usize {
        self.calls.lock().expect("poisoned").len()
    }

    pub fn clear_calls(&self) {
        self.calls.lock().expect("poisoned").clear();
    }
}

impl ChatProvider for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.lock().expect("poisoned").push(request.clone());
        let scripted = {
            let mut rules = self.rules.lock().expect("poisoned");
            let hit = rules.iter().position(|r| {
                r.template == request.template
                    && r.remaining != Some(0)
                    && r.when.as_ref().is_none_or(|(k, v)| request.vars.get(k) == Some(v))
            });
            hit.map(|i| {
                let rule = &mut rules[i];
                if let Some(n) = rule.remaining.as_mut() {
                    *n -= 1;
                }
                rule.reply.clone()
            })
        };
        match scripted {
            Some(reply) => reply,
            None => self.inner.complete(request),
        }
    }
}

/// Image generator wrapper that records prompts and fails those containing
/// configured substrings.
pub struct ScriptedImages {
    inner: std::sync::Arc<dyn ImageGenerator>,
    failures: Mutex<Vec<(String, ProviderError)>>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedImages {
    pub fn new(inner: std::sync::Arc<dyn ImageGenerator>) -> Self {
        Self {
            inner,
            failures: Mutex::new(Vec::new()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn fail_prompts_containing(&self, needle: impl Into<String>, error: ProviderError) {
        self.failures.lock().expect("poisoned").push((needle.into(), error));
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("poisoned").clone()
    }

    pub fn count(&self) -> usize {
        self.prompts.lock().expect("poisoned").len()
    }

    pub fn clear(&self) {
        self.prompts.lock().expect("poisoned").clear();
    }
}

impl ImageGenerator for ScriptedImages {
    fn generate(&self, prompt: &str, seed: u64) -> Result<GeneratedImage, ProviderError> {
        self.prompts.lock().expect("poisoned").push(prompt.to_owned());
        let failure = self
            .failures
            .lock()
            .expect("poisoned")
            .iter()
            .find(|(needle, _)| prompt.contains(needle.as_str()))
            .map(|(_, e)| e.clone());
        match failure {
            Some(e) => Err(e),
            None => self.inner.generate(prompt, seed),
        }
    }
}
