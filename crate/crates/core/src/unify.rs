//! Embedding-based canonicalization of extracted terms.
//!
//! Every synonym phrase of a dictionary is embedded once. A new term is
//! mapped to the canonical entry of its most similar phrase when the cosine
//! similarity clears the configured threshold.

use std::collections::{BTreeMap, HashSet};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{error, warn};

pub type Vector = Vec<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnifyError {
    #[error("vectors have different lengths ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("no canonical index for dictionary key `{0}`")]
    UnknownKey(String),
    #[error("embedding provider failed: {0}")]
    Provider(String),
}

/// Turns texts into fixed-length vectors. The same text must always produce
/// the same vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>, UnifyError>;

    fn embed(&self, text: &str) -> Result<Vector, UnifyError> {
        self.embed_batch(&[text.to_string()])?
            .pop()
            .ok_or_else(|| UnifyError::Provider("empty response".into()))
    }
}

/// Deterministic offline provider. Each lowercase whitespace token seeds a
/// fixed random unit vector; a text embeds to the normalized mean of its
/// token vectors.
#[derive(Debug, Clone)]
pub struct HashEmbedding {
    dimension: usize,
}

impl HashEmbedding {
    pub const DEFAULT_DIMENSION: usize = 64;

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    fn token_vector(&self, token: &str) -> Vector {
        let digest = Sha256::digest(token.as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vector = (0..self.dimension).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalized(v)
    }

    fn embed_one(&self, text: &str) -> Vector {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
        if tokens.is_empty() {
            return self.token_vector("");
        }
        let mut sum = vec![0.0; self.dimension];
        for t in &tokens {
            for (s, x) in sum.iter_mut().zip(self.token_vector(t)) {
                *s += x;
            }
        }
        normalized(sum)
    }
}

impl Default for HashEmbedding {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMENSION)
    }
}

impl EmbeddingProvider for HashEmbedding {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>, UnifyError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

fn normalized(mut v: Vector) -> Vector {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn cosine_similarity(q: &[f64], c: &[f64]) -> Result<f64, UnifyError> {
    if q.len() != c.len() {
        return Err(UnifyError::DimensionMismatch(q.len(), c.len()));
    }
    let (mut dot, mut qq, mut cc) = (0.0, 0.0, 0.0);
    for (a, b) in q.iter().zip(c) {
        dot += a * b;
        qq += a * a;
        cc += b * b;
    }
    if qq == 0.0 || cc == 0.0 {
        return Err(UnifyError::ZeroVector);
    }
    Ok((dot / (qq.sqrt() * cc.sqrt())).clamp(-1.0, 1.0))
}

/// Canonical term → synonym phrases. The canonical term is implicitly one of
/// its own phrases.
pub type SynonymDictionary = IndexMap<String, Vec<String>>;

/// Dictionary key (e.g. `TILLAGE_PRACTICES`) → dictionary.
pub type DictionaryConfig = IndexMap<String, SynonymDictionary>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalIndex {
    pub phrases: Vec<String>,
    pub vectors: Vec<Vector>,
    /// Canonical term for each phrase row.
    pub label_map: Vec<String>,
}

impl CanonicalIndex {
    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    fn is_complete(&self) -> bool {
        !self.phrases.is_empty() && self.vectors.len() == self.phrases.len() && self.label_map.len() == self.phrases.len()
    }
}

fn candidate_phrases(dict: &SynonymDictionary) -> (Vec<String>, Vec<String>) {
    let mut seen = HashSet::new();
    let mut phrases = Vec::new();
    let mut labels = Vec::new();
    for (canonical, synonyms) in dict {
        for phrase in std::iter::once(canonical).chain(synonyms) {
            let phrase = phrase.trim();
            if phrase.is_empty() || !seen.insert(phrase.to_string()) {
                continue;
            }
            phrases.push(phrase.to_string());
            labels.push(canonical.clone());
        }
    }
    (phrases, labels)
}

#[derive(Debug, Clone, Default)]
pub struct Precomputed {
    pub indices: BTreeMap<String, CanonicalIndex>,
    /// Keys whose embedding failed, with the reason.
    pub failures: Vec<(String, UnifyError)>,
}

/// Embeds every phrase of every non-empty dictionary once.
pub fn precompute(dicts: &DictionaryConfig, provider: &dyn EmbeddingProvider) -> Precomputed {
    let mut out = Precomputed::default();
    for (key, dict) in dicts {
        if dict.is_empty() {
            warn!(key = key.as_str(), "skipping empty synonym dictionary");
            continue;
        }
        let (phrases, label_map) = candidate_phrases(dict);
        match provider.embed_batch(&phrases) {
            Ok(vectors) if vectors.len() == phrases.len() => {
                out.indices.insert(key.clone(), CanonicalIndex { phrases, vectors, label_map });
            }
            Ok(vectors) => {
                let e = UnifyError::Provider(format!("{} vectors for {} phrases", vectors.len(), phrases.len()));
                error!(key = key.as_str(), error = %e, "embedding generation failed");
                out.failures.push((key.clone(), e));
            }
            Err(e) => {
                error!(key = key.as_str(), error = %e, "embedding generation failed");
                out.failures.push((key.clone(), e));
            }
        }
    }
    out
}

/// Index and score of the most similar phrase; ties go to the lowest index.
/// An empty or inconsistent index yields `(None, 0.0)`.
pub fn find_best_match(query: &[f64], index: &CanonicalIndex) -> (Option<usize>, f64) {
    if !index.is_complete() {
        error!("canonical index is empty or incomplete");
        return (None, 0.0);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in index.vectors.iter().enumerate() {
        let score = match cosine_similarity(query, v) {
            Ok(s) => s,
            Err(e) => {
                error!(error = %e, "cosine similarity failed");
                return (None, 0.0);
            }
        };
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((i, score));
        }
    }
    match best {
        Some((i, s)) => (Some(i), s),
        None => (None, 0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnifyConfig {
    pub threshold: f64,
}

impl Default for UnifyConfig {
    fn default() -> Self {
        Self { threshold: 0.55 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unification {
    pub canonical: Option<String>,
    pub best_phrase: Option<String>,
    pub score: f64,
}

pub fn unify_term_detailed(
    term: &str,
    key: &str,
    indices: &BTreeMap<String, CanonicalIndex>,
    provider: &dyn EmbeddingProvider,
    cfg: UnifyConfig,
) -> Result<Unification, UnifyError> {
    let index = indices.get(key).ok_or_else(|| UnifyError::UnknownKey(key.to_string()))?;
    let query = provider.embed(term)?;
    let (best, score) = find_best_match(&query, index);
    let accepted = best.filter(|_| score >= cfg.threshold);
    Ok(Unification {
        canonical: accepted.map(|i| index.label_map[i].clone()),
        best_phrase: best.map(|i| index.phrases[i].clone()),
        score,
    })
}

/// Canonical term for `term`, or `None` when the best score is below the
/// threshold.
pub fn unify_term(
    term: &str,
    key: &str,
    indices: &BTreeMap<String, CanonicalIndex>,
    provider: &dyn EmbeddingProvider,
    cfg: UnifyConfig,
) -> Result<Option<String>, UnifyError> {
    Ok(unify_term_detailed(term, key, indices, provider, cfg)?.canonical)
}

/// Maps raw terms to canonical vocabulary entries.
pub trait TermUnifier {
    fn unify(&self, term: &str, key: &str) -> Result<Option<String>, UnifyError>;
    fn keys(&self) -> Vec<String>;
}

/// Precomputed indices bundled with the provider that built them.
pub struct Unifier<'p> {
    pub indices: BTreeMap<String, CanonicalIndex>,
    pub provider: &'p dyn EmbeddingProvider,
    pub cfg: UnifyConfig,
}

impl<'p> Unifier<'p> {
    pub fn build(dicts: &DictionaryConfig, provider: &'p dyn EmbeddingProvider, cfg: UnifyConfig) -> (Self, Vec<(String, UnifyError)>) {
        let pre = precompute(dicts, provider);
        (Self { indices: pre.indices, provider, cfg }, pre.failures)
    }
}

impl TermUnifier for Unifier<'_> {
    fn unify(&self, term: &str, key: &str) -> Result<Option<String>, UnifyError> {
        unify_term(term, key, &self.indices, self.provider, self.cfg)
    }

    fn keys(&self) -> Vec<String> {
        self.indices.keys().cloned().collect()
    }
}
