//! Embedding spaces used for typicality scoring and clustering: averaged
//! word vectors, sentence vectors and a joint text–image space.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numeric::{self, NumericError, Scalar};
use crate::provider::mock::svg_prompt;
use crate::provider::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSpace {
    WordCooccurrence,
    Sentence,
    ImageTextJoint,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("no token of {0:?} is in the word-vector vocabulary")]
    NoEmbedding(String),
    #[error("invalid embedding input: {0}")]
    Validation(String),
    #[error("cannot compare {left:?} with {right:?} vectors")]
    SpaceMismatch { left: EmbeddingSpace, right: EmbeddingSpace },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("embedder failure: {0}")]
    Provider(String),
    #[error("word vectors: {0}")]
    Load(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector<F> {
    pub space: EmbeddingSpace,
    values: Vec<F>,
}

impl<F: Scalar> EmbeddingVector<F> {
    pub fn new(space: EmbeddingSpace, values: Vec<F>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Numeric(NumericError::Empty));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self { space, values })
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<F> {
        self.values
    }
}

/// Cosine of two vectors from the same space.
pub fn cosine_similarity<F: Scalar>(a: &EmbeddingVector<F>, b: &EmbeddingVector<F>) -> Result<F, EmbeddingError> {
    if a.space != b.space {
        return Err(EmbeddingError::SpaceMismatch {
            left: a.space,
            right: b.space,
        });
    }
    Ok(numeric::cosine(&a.values, &b.values)?)
}

/// Lowercase tokens split on whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Word-vector table loaded from `token v1 ... vd` lines.
#[derive(Debug, Clone)]
pub struct WordVectors<F> {
    dim: usize,
    table: HashMap<String, Vec<F>>,
}

impl<F: Scalar> WordVectors<F> {
    /// Dimension is taken from the first line; blank lines are skipped.
    pub fn parse(source: &str) -> Result<Self, EmbeddingError> {
        let mut dim = None;
        let mut table = HashMap::new();
        for (n, line) in source.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(|p| {
                    p.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(F::lit)
                        .ok_or_else(|| EmbeddingError::Load(format!("line {}: bad value {p:?}", n + 1)))
                })
                .collect::<Result<Vec<F>, _>>()?;
            let d = *dim.get_or_insert(values.len());
            if d == 0 || values.len() != d {
                return Err(EmbeddingError::Load(format!(
                    "line {}: expected {d} values, found {}",
                    n + 1,
                    values.len()
                )));
            }
            table.insert(token.to_lowercase(), values);
        }
        let dim = dim.ok_or_else(|| EmbeddingError::Load("empty word-vector file".into()))?;
        Ok(Self { dim, table })
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let source = std::fs::read_to_string(path).map_err(|e| EmbeddingError::Load(format!("{}: {e}", path.display())))?;
        Self::parse(&source)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[F]> {
        self.table.get(token).map(Vec::as_slice)
    }

    /// Mean of the vectors of in-vocabulary tokens.
    pub fn embed(&self, text: &str) -> Result<EmbeddingVector<F>, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::Validation("text must be nonempty".into()));
        }
        let mut sum = vec![F::zero(); self.dim];
        let mut found = 0usize;
        for token in tokenize(text) {
            if let Some(v) = self.table.get(&token) {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s = *s + *x;
                }
                found += 1;
            }
        }
        if found == 0 {
            return Err(EmbeddingError::NoEmbedding(text.to_owned()));
        }
        let n = F::count(found);
        EmbeddingVector::new(EmbeddingSpace::WordCooccurrence, sum.into_iter().map(|s| s / n).collect())
    }
}

pub trait SentenceEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbeddingError>;
}

#[derive(Debug, Clone, Copy)]
pub enum JointInput<'a> {
    Text(&'a str),
    Image { image: &'a ImageRef, bytes: &'a [u8] },
}

pub trait JointEmbedder: Send + Sync {
    fn embed(&self, input: JointInput<'_>) -> Result<Vec<f64>, EmbeddingError>;
}

fn feature_vector(salt: &str, seed: u64, feature: &str, dim: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(feature.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Offline sentence embedder: sum of seeded random vectors for each token
/// (weight 1) and character trigram (weight 1/#trigrams), unit-normalised.
#[derive(Debug, Clone)]
pub struct HashingSentenceEmbedder {
    pub dim: usize,
    pub seed: u64,
    salt: &'static str,
}

impl HashingSentenceEmbedder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            salt: "sentence",
        }
    }

    fn vector(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(EmbeddingError::Validation("text must contain a word".into()));
        }
        let mut acc = vec![0.0; self.dim];
        for t in &tokens {
            for (a, x) in acc.iter_mut().zip(feature_vector(self.salt, self.seed, t, self.dim)) {
                *a += x;
            }
        }
        let joined: Vec<char> = format!(" {} ", tokens.join(" ")).chars().collect();
        let trigrams: Vec<String> = joined.windows(3).map(|w| w.iter().collect()).collect();
        let w = 1.0 / trigrams.len() as f64;
        for tri in &trigrams {
            for (a, x) in acc.iter_mut().zip(feature_vector(self.salt, self.seed, &format!("#{tri}"), self.dim)) {
                *a += w * x;
            }
        }
        Ok(numeric::normalized(&acc))
    }
}

impl Default for HashingSentenceEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM, 0)
    }
}

impl SentenceEmbedder for HashingSentenceEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        self.vector(text)
    }
}

/// Offline joint embedder. Text uses a hashing embedder; a placeholder image
/// embeds as the text vector of the prompt in its `<desc>` plus a small
/// perturbation seeded by the image hash.
#[derive(Debug, Clone)]
pub struct MockJointEmbedder {
    text: HashingSentenceEmbedder,
    pub noise: f64,
}

impl MockJointEmbedder {
    pub fn new(dim: usize, seed: u64, noise: f64) -> Self {
        Self {
            text: HashingSentenceEmbedder {
                dim,
                seed,
                salt: "joint",
            },
            noise,
        }
    }
}

impl Default for MockJointEmbedder {
    fn default() -> Self {
        Self::new(HashingSentenceEmbedder::DEFAULT_DIM, 0, 0.15)
    }
}

impl JointEmbedder for MockJointEmbedder {
    fn embed(&self, input: JointInput<'_>) -> Result<Vec<f64>, EmbeddingError> {
        match input {
            JointInput::Text(t) => self.text.vector(t),
            JointInput::Image { image, bytes } => {
                let noise = numeric::normalized(&feature_vector("image-noise", self.text.seed, &image.hash, self.text.dim));
                let base = match svg_prompt(bytes) {
                    Some(prompt) => self.text.vector(&prompt)?,
                    None => numeric::normalized(&feature_vector("image", self.text.seed, &image.hash, self.text.dim)),
                };
                Ok(numeric::normalized(
                    &base.iter().zip(&noise).map(|(b, n)| b + self.noise * n).collect::<Vec<_>>(),
                ))
            }
        }
    }
}

/// Bundle of the three embedding spaces.
#[derive(Clone)]
pub struct EmbeddingGateway {
    pub words: Option<Arc<WordVectors<f64>>>,
    pub sentence: Arc<dyn SentenceEmbedder>,
    pub joint: Arc<dyn JointEmbedder>,
}

fn checked(space: EmbeddingSpace, values: Vec<f64>) -> Result<EmbeddingVector<f64>, EmbeddingError> {
    EmbeddingVector::new(space, values)
}

impl EmbeddingGateway {
    pub fn mock(words: Option<Arc<WordVectors<f64>>>) -> Self {
        Self {
            words,
            sentence: Arc::new(HashingSentenceEmbedder::default()),
            joint: Arc::new(MockJointEmbedder::default()),
        }
    }

    pub fn embed_word_text(&self, text: &str) -> Result<EmbeddingVector<f64>, EmbeddingError> {
        match &self.words {
            Some(w) => w.embed(text),
            None => Err(EmbeddingError::NoEmbedding(text.to_owned())),
        }
    }

    pub fn embed_sentence(&self, text: &str) -> Result<EmbeddingVector<f64>, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::Validation("text must be nonempty".into()));
        }
        checked(EmbeddingSpace::Sentence, self.sentence.embed(text)?)
    }

    pub fn embed_joint_text(&self, text: &str) -> Result<EmbeddingVector<f64>, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::Validation("text must be nonempty".into()));
        }
        checked(EmbeddingSpace::ImageTextJoint, self.joint.embed(JointInput::Text(text))?)
    }

    pub fn embed_image(&self, image: &ImageRef, bytes: &[u8]) -> Result<EmbeddingVector<f64>, EmbeddingError> {
        checked(EmbeddingSpace::ImageTextJoint, self.joint.embed(JointInput::Image { image, bytes })?)
    }

    /// Word-space cosine of `a` and `b`, falling back to sentence space when
    /// either side has no word embedding.
    pub fn text_similarity(&self, a: &str, b: &str) -> Result<(f64, EmbeddingSpace), EmbeddingError> {
        let word = self
            .embed_word_text(a)
            .and_then(|va| Ok((va, self.embed_word_text(b)?)))
            .and_then(|(va, vb)| cosine_similarity(&va, &vb));
        match word {
            Ok(c) => Ok((c, EmbeddingSpace::WordCooccurrence)),
            Err(EmbeddingError::NoEmbedding(_)) | Err(EmbeddingError::Numeric(NumericError::ZeroNorm)) => {
                tracing::debug!(a, b, "word-space similarity unavailable, using sentence space");
                let c = cosine_similarity(&self.embed_sentence(a)?, &self.embed_sentence(b)?)?;
                Ok((c, EmbeddingSpace::Sentence))
            }
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const TOY: &str = "cat 1 0 0\ndog 0 1 0\nfish 0 0 2\n";

    #[test]
    fn single_token_is_exact() {
        let w = WordVectors::<f64>::parse(TOY).unwrap();
        assert_eq!(w.embed("Cat").unwrap().values(), &[1.0, 0.0, 0.0]);
        assert_eq!(w.embed("cat cat").unwrap(), w.embed("cat").unwrap());
        assert_eq!(w.embed("cat, dog!").unwrap().values(), &[0.5, 0.5, 0.0]);
        assert_eq!(w.embed("cat qzxv").unwrap(), w.embed("cat").unwrap());
        assert!(matches!(w.embed("qzxv"), Err(EmbeddingError::NoEmbedding(_))));
    }

    #[test]
    fn loader_rejects_ragged_rows() {
        assert!(WordVectors::<f64>::parse("a 1 2\nb 1\n").is_err());
        assert!(WordVectors::<f64>::parse("a 1 x\n").is_err());
        assert!(WordVectors::<f64>::parse("\n").is_err());
        assert_eq!(WordVectors::<f32>::parse(TOY).unwrap().dim(), 3);
    }

    #[test]
    fn cosine_checks_space() {
        let a = EmbeddingVector::new(EmbeddingSpace::Sentence, vec![1.0, 2.0, 3.0]).unwrap();
        let b = EmbeddingVector::new(EmbeddingSpace::Sentence, vec![4.0, 5.0, 6.0]).unwrap();
        // 32 / sqrt(14 * 77)
        assert_relative_eq!(cosine_similarity(&a, &b).unwrap(), 32.0 / (14.0f64 * 77.0).sqrt(), epsilon = 1e-12);
        let c = EmbeddingVector::new(EmbeddingSpace::ImageTextJoint, vec![4.0, 5.0, 6.0]).unwrap();
        assert!(matches!(cosine_similarity(&a, &c), Err(EmbeddingError::SpaceMismatch { .. })));
        assert!(EmbeddingVector::new(EmbeddingSpace::Sentence, vec![f64::NAN]).is_err());
    }

    #[test]
    fn hashing_embedder_is_stable_and_discriminative() {
        let gw = EmbeddingGateway::mock(None);
        let a = gw.embed_sentence("watercolor fox").unwrap();
        assert_eq!(a, gw.embed_sentence("watercolor fox").unwrap());
        let b = gw.embed_sentence("neon city").unwrap();
        assert!(cosine_similarity(&a, &b).unwrap() < 1.0);
        assert!(matches!(gw.embed_sentence(" "), Err(EmbeddingError::Validation(_))));
        // independent recomputation of the token/trigram construction
        let e = HashingSentenceEmbedder::default();
        let mut acc = vec![0.0; 64];
        for t in ["neon", "city"] {
            for (a, x) in acc.iter_mut().zip(feature_vector("sentence", 0, t, 64)) {
                *a += x;
            }
        }
        let chars: Vec<char> = " neon city ".chars().collect();
        let n = chars.len() - 2;
        for w in chars.windows(3) {
            let tri: String = w.iter().collect();
            for (a, x) in acc.iter_mut().zip(feature_vector("sentence", 0, &format!("#{tri}"), 64)) {
                *a += x / n as f64;
            }
        }
        let expect = numeric::normalized(&acc);
        for (x, y) in e.embed("Neon city").unwrap().iter().zip(&expect) {
            assert_relative_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn fallback_to_sentence_space() {
        let gw = EmbeddingGateway::mock(Some(Arc::new(WordVectors::parse(TOY).unwrap())));
        let (c, space) = gw.text_similarity("cat", "dog").unwrap();
        assert_eq!(space, EmbeddingSpace::WordCooccurrence);
        assert_relative_eq!(c, 0.0);
        let (_, space) = gw.text_similarity("cat", "zebra").unwrap();
        assert_eq!(space, EmbeddingSpace::Sentence);
    }
}
