//! Chunk-by-chunk structured field extraction with a cumulative state and a
//! pluggable extractor.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, warn};

use crate::chunking::{chunk_text, ChunkError, ChunkSpec, Tokenizer};
use crate::records::{FieldMap, FieldValue, MetadataRecord};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("fields not in the specification: {}", .0.join(", "))]
    UnknownFields(Vec<String>),
    #[error("field `{0}` is specified twice")]
    DuplicateSpec(String),
    #[error("extractor failed: {0}")]
    Extractor(String),
    #[error(transparent)]
    Chunking(#[from] ChunkError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Text,
    List,
    Structured,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    #[serde(default)]
    pub explanation: String,
    pub kind: FieldKind,
}

impl FieldSpec {
    pub fn new(name: &str, kind: FieldKind) -> Self {
        Self { name: name.into(), explanation: String::new(), kind }
    }
}

pub fn validate_specs(specs: &[FieldSpec]) -> Result<(), ExtractionError> {
    let mut seen = std::collections::HashSet::new();
    for s in specs {
        if !seen.insert(s.name.as_str()) {
            return Err(ExtractionError::DuplicateSpec(s.name.clone()));
        }
    }
    Ok(())
}

fn as_items(v: &FieldValue) -> Vec<String> {
    match v {
        FieldValue::Structured(_) => Vec::new(),
        other => other.items(),
    }
}

/// Merges `update` into `state`: list fields take the union in order of
/// first appearance, text fields are overwritten by non-empty values, and
/// structured fields are merged key by key with the update winning.
pub fn unify_fields(state: &FieldMap, update: &FieldMap, specs: &[FieldSpec]) -> Result<FieldMap, ExtractionError> {
    let unknown: Vec<String> =
        update.keys().filter(|k| !specs.iter().any(|s| &s.name == *k)).cloned().collect();
    if !unknown.is_empty() {
        return Err(ExtractionError::UnknownFields(unknown));
    }
    let mut out = state.clone();
    for spec in specs {
        let Some(new) = update.get(&spec.name) else { continue };
        match spec.kind {
            FieldKind::List => {
                let incoming = as_items(new);
                if incoming.is_empty() {
                    continue;
                }
                let mut merged = out.get(&spec.name).map(as_items).unwrap_or_default();
                for item in incoming {
                    if !merged.contains(&item) {
                        merged.push(item);
                    }
                }
                let mut seen = std::collections::HashSet::new();
                merged.retain(|i| seen.insert(i.clone()));
                out.insert(spec.name.clone(), FieldValue::List(merged));
            }
            FieldKind::Text => {
                let text = match new {
                    FieldValue::Text(s) => s.trim().to_string(),
                    FieldValue::List(items) => items.join(", ").trim().to_string(),
                    FieldValue::Structured(_) => {
                        warn!(field = %spec.name, "structured value for a text field ignored");
                        continue;
                    }
                };
                if !text.is_empty() {
                    out.insert(spec.name.clone(), FieldValue::Text(text));
                }
            }
            FieldKind::Structured => {
                let FieldValue::Structured(map) = new else {
                    warn!(field = %spec.name, "non-object value for a structured field ignored");
                    continue;
                };
                if map.is_empty() {
                    continue;
                }
                let mut merged = match out.get(&spec.name) {
                    Some(FieldValue::Structured(m)) => m.clone(),
                    _ => serde_json::Map::new(),
                };
                for (k, v) in map {
                    merged.insert(k.clone(), v.clone());
                }
                out.insert(spec.name.clone(), FieldValue::Structured(merged));
            }
        }
    }
    Ok(out)
}

pub trait Extractor: Send + Sync {
    /// Fields found in `chunk`, given what is known so far.
    fn extract(&self, state: &FieldMap, chunk: &str, specs: &[FieldSpec]) -> Result<FieldMap, ExtractionError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Case-insensitive substring the chunk must contain.
    pub when_chunk_contains: String,
    /// Field that must already be non-empty in the state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when_state_has: Option<String>,
    #[serde(default)]
    pub output: FieldMap,
    #[serde(default)]
    pub fail: bool,
}

/// Replays fixed outputs: every matching rule contributes, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedExtractor {
    pub rules: Vec<ScriptRule>,
}

impl Extractor for ScriptedExtractor {
    fn extract(&self, state: &FieldMap, chunk: &str, specs: &[FieldSpec]) -> Result<FieldMap, ExtractionError> {
        let lower = chunk.to_lowercase();
        let mut out = FieldMap::new();
        for rule in &self.rules {
            if !lower.contains(&rule.when_chunk_contains.to_lowercase()) {
                continue;
            }
            if let Some(f) = &rule.when_state_has {
                if state.get(f).is_none_or(FieldValue::is_empty) {
                    continue;
                }
            }
            if rule.fail {
                return Err(ExtractionError::Extractor(format!("scripted failure on `{}`", rule.when_chunk_contains)));
            }
            out = unify_fields(&out, &rule.output, specs)?;
        }
        Ok(out)
    }
}

/// Finds vocabulary terms in the chunk. Each field maps canonical values to
/// the surface forms that signal them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeywordExtractor {
    pub vocabulary: IndexMap<String, IndexMap<String, Vec<String>>>,
}

fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    let phrase = phrase.to_lowercase();
    if phrase.is_empty() {
        return false;
    }
    haystack.match_indices(&phrase).any(|(i, _)| {
        let before = haystack[..i].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after = haystack[i + phrase.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        before && after
    })
}

impl Extractor for KeywordExtractor {
    fn extract(&self, _state: &FieldMap, chunk: &str, specs: &[FieldSpec]) -> Result<FieldMap, ExtractionError> {
        let lower = chunk.to_lowercase();
        let mut out = FieldMap::new();
        for spec in specs {
            let Some(vocab) = self.vocabulary.get(&spec.name) else { continue };
            let found: Vec<String> = vocab
                .iter()
                .filter(|(canon, forms)| {
                    contains_phrase(&lower, canon) || forms.iter().any(|f| contains_phrase(&lower, f))
                })
                .map(|(canon, _)| canon.clone())
                .collect();
            if found.is_empty() {
                continue;
            }
            let value = match spec.kind {
                FieldKind::List => FieldValue::List(found),
                FieldKind::Text => FieldValue::Text(found[0].clone()),
                FieldKind::Structured => continue,
            };
            out.insert(spec.name.clone(), value);
        }
        Ok(out)
    }
}

/// Extractor results keyed by a hash of the specs, the state and the chunk.
#[derive(Debug, Default)]
pub struct ExtractionCache {
    entries: Mutex<HashMap<String, FieldMap>>,
}

impl ExtractionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn key(state: &FieldMap, chunk: &str, specs: &[FieldSpec]) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(specs).expect("specs serialize"));
        h.update([0]);
        h.update(serde_json::to_vec(state).expect("state serializes"));
        h.update([0]);
        h.update(chunk.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn get(&self, key: &str) -> Option<FieldMap> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, key: String, value: FieldMap) {
        self.entries.lock().expect("cache lock").insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(path: &Path) -> Result<Self, ExtractionError> {
        if !path.exists() {
            return Ok(Self::new());
        }
        let entries: std::collections::BTreeMap<String, FieldMap> =
            serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self { entries: Mutex::new(entries.into_iter().collect()) })
    }

    pub fn save(&self, path: &Path) -> Result<(), ExtractionError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let sorted: std::collections::BTreeMap<String, FieldMap> =
            self.entries.lock().expect("cache lock").clone().into_iter().collect();
        std::fs::write(path, serde_json::to_string_pretty(&sorted)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkFailure {
    pub chunk_idx: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionOutcome {
    pub fields: FieldMap,
    pub failures: Vec<ChunkFailure>,
    pub extractor_calls: usize,
    pub cache_hits: usize,
}

/// Runs the extractor over each chunk in order, feeding it the state merged
/// so far. A failing chunk is recorded and skipped.
pub fn extract_document(
    full_text: &str,
    specs: &[FieldSpec],
    extractor: &dyn Extractor,
    cache: &ExtractionCache,
    tok: &dyn Tokenizer,
    chunk: ChunkSpec,
) -> Result<ExtractionOutcome, ExtractionError> {
    validate_specs(specs)?;
    let mut outcome = ExtractionOutcome::default();
    for (chunk_idx, text) in chunk_text(full_text, chunk, tok)?.iter().enumerate() {
        let key = ExtractionCache::key(&outcome.fields, text, specs);
        let update = match cache.get(&key) {
            Some(hit) => {
                outcome.cache_hits += 1;
                hit
            }
            None => {
                outcome.extractor_calls += 1;
                match extractor.extract(&outcome.fields, text, specs) {
                    Ok(u) => {
                        cache.insert(key, u.clone());
                        u
                    }
                    Err(e) => {
                        warn!(chunk_idx, error = %e, "extraction failed for chunk");
                        outcome.failures.push(ChunkFailure { chunk_idx, error: e.to_string() });
                        continue;
                    }
                }
            }
        };
        match unify_fields(&outcome.fields, &update, specs) {
            Ok(merged) => outcome.fields = merged,
            Err(e) => {
                warn!(chunk_idx, error = %e, "extractor output rejected");
                outcome.failures.push(ChunkFailure { chunk_idx, error: e.to_string() });
            }
        }
        debug!(chunk_idx, fields = outcome.fields.len(), "chunk merged");
    }
    Ok(outcome)
}

/// Extracts fields for every record, storing them in `extracted_fields` and
/// noting failures in `error`. Documents run in parallel when `parallel`.
pub fn extract_records(
    records: &mut [MetadataRecord],
    specs: &[FieldSpec],
    extractor: &dyn Extractor,
    cache: &ExtractionCache,
    tok: &dyn Tokenizer,
    chunk: ChunkSpec,
    parallel: bool,
) -> Result<Vec<ExtractionOutcome>, ExtractionError> {
    let run = |r: &mut MetadataRecord| -> Result<ExtractionOutcome, ExtractionError> {
        let out = extract_document(&r.full_text, specs, extractor, cache, tok, chunk)?;
        for (k, v) in &out.fields {
            r.extracted_fields.insert(k.clone(), v.clone());
        }
        if !out.failures.is_empty() {
            let msg = out.failures.iter().map(|f| format!("chunk {}: {}", f.chunk_idx, f.error)).collect::<Vec<_>>();
            r.error = Some(msg.join("; "));
        }
        Ok(out)
    };
    if parallel {
        records.par_iter_mut().map(run).collect()
    } else {
        records.iter_mut().map(run).collect()
    }
}

/// Builds a keyword extractor whose list fields look for the canonical
/// terms and synonyms of the named dictionaries.
pub fn keyword_extractor_from_dictionaries(
    field_to_dictionary: &IndexMap<String, String>,
    dictionaries: &crate::unify::DictionaryConfig,
) -> KeywordExtractor {
    let mut vocabulary = IndexMap::new();
    for (field, dict) in field_to_dictionary {
        if let Some(d) = dictionaries.get(dict) {
            vocabulary.insert(field.clone(), d.clone());
        }
    }
    KeywordExtractor { vocabulary }
}

/// Reads a field-spec file: either a list of specs or a map of field name to
/// `{explanation, kind}`.
pub fn parse_field_specs(json: &str) -> Result<Vec<FieldSpec>, ExtractionError> {
    let v: Value = serde_json::from_str(json)?;
    let specs: Vec<FieldSpec> = if v.is_array() {
        serde_json::from_value(v)?
    } else {
        #[derive(Deserialize)]
        struct Entry {
            #[serde(default)]
            explanation: String,
            kind: FieldKind,
        }
        let map: IndexMap<String, Entry> = serde_json::from_value(v)?;
        map.into_iter().map(|(name, e)| FieldSpec { name, explanation: e.explanation, kind: e.kind }).collect()
    };
    validate_specs(&specs)?;
    Ok(specs)
}
