//! Scholarly record model, multi-source fusion and non-destructive enrichment.
//!
//! Records travel between stages as JSON Lines. Field names on the wire are
//! the snake_case names of [`MetadataRecord`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::{info, warn};

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("enrichment entry DOI `{entry}` does not match record DOI `{record}`")]
    DoiMismatch { record: String, entry: String },
    #[error("duplicate enrichment entry for DOI `{0}`")]
    DuplicateEnrichment(String),
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Value of one extracted field: free text, a list of items, or an object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Text(String),
    List(Vec<String>),
    Structured(serde_json::Map<String, Value>),
}

impl FieldValue {
    pub fn is_empty(&self) -> bool {
        match self {
            FieldValue::Text(s) => s.trim().is_empty(),
            FieldValue::List(items) => items.iter().all(|s| s.trim().is_empty()),
            FieldValue::Structured(map) => map.is_empty(),
        }
    }

    /// Flattens the value into display items: the text itself, each list
    /// item, or `key: value` pairs of a structured object.
    pub fn items(&self) -> Vec<String> {
        match self {
            FieldValue::Text(s) if s.trim().is_empty() => Vec::new(),
            FieldValue::Text(s) => vec![s.trim().to_string()],
            FieldValue::List(items) => items
                .iter()
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
            FieldValue::Structured(map) => map
                .iter()
                .map(|(k, v)| match v {
                    Value::String(s) => format!("{k}: {s}"),
                    other => format!("{k}: {other}"),
                })
                .collect(),
        }
    }
}

pub type FieldMap = BTreeMap<String, FieldValue>;

/// One scholarly work as it moves through the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetadataRecord {
    pub doi: String,
    pub title: String,
    pub authors: String,
    pub date: String,
    pub journal: String,
    pub volume: String,
    pub issue: String,
    pub pages: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub item_type: String,
    #[serde(deserialize_with = "lenient_count")]
    pub citation_count: u64,
    pub primary_topic: Option<Value>,
    pub is_published: Option<bool>,
    pub is_retracted: Option<bool>,
    pub open_alex_id: String,
    pub pdf_path: Option<PathBuf>,
    pub zotero_key: String,
    pub in_text_citation: String,
    pub full_citation: String,
    pub full_text: String,
    pub tables_json: String,
    pub equations_json: String,
    pub token_count: u64,
    pub error: Option<String>,
    pub extracted_fields: FieldMap,
}

impl Default for MetadataRecord {
    fn default() -> Self {
        Self {
            doi: String::new(),
            title: String::new(),
            authors: String::new(),
            date: String::new(),
            journal: String::new(),
            volume: String::new(),
            issue: String::new(),
            pages: String::new(),
            abstract_text: String::new(),
            item_type: String::new(),
            citation_count: 0,
            primary_topic: None,
            is_published: None,
            is_retracted: None,
            open_alex_id: String::new(),
            pdf_path: None,
            zotero_key: String::new(),
            in_text_citation: String::new(),
            full_citation: String::new(),
            full_text: String::new(),
            tables_json: "[]".to_string(),
            equations_json: "[]".to_string(),
            token_count: 0,
            error: None,
            extracted_fields: FieldMap::new(),
        }
    }
}

impl MetadataRecord {
    pub fn with_doi_title(doi: &str, title: &str) -> Self {
        Self {
            doi: doi.to_string(),
            title: title.to_string(),
            ..Self::default()
        }
    }
}

// Missing, null, negative or non-numeric counts coerce to 0.
fn lenient_count<'de, D: Deserializer<'de>>(de: D) -> Result<u64, D::Error> {
    let v = Option::<Value>::deserialize(de)?;
    Ok(v.as_ref().map(coerce_count).unwrap_or(0))
}

fn coerce_count(v: &Value) -> u64 {
    match v {
        Value::Number(n) => n
            .as_u64()
            .or_else(|| n.as_f64().filter(|f| f.is_finite() && *f > 0.0).map(|f| f as u64))
            .unwrap_or(0),
        Value::String(s) => s.trim().parse::<f64>().ok().filter(|f| *f > 0.0).map(|f| f as u64).unwrap_or(0),
        _ => 0,
    }
}

/// Metadata returned by an enrichment source for one DOI.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnrichmentEntry {
    pub doi: String,
    #[serde(rename = "abstract")]
    pub abstract_text: Option<String>,
    pub item_type: Option<String>,
    pub citation_count: Option<i64>,
    pub primary_topic: Option<Value>,
    pub is_published: Option<bool>,
    pub is_retracted: Option<bool>,
    pub open_alex_id: Option<String>,
}

/// Lowercases and trims. Interior whitespace is kept.
pub fn normalize_key(s: &str) -> String {
    s.to_lowercase().trim().to_string()
}

/// Concatenates the record lists in order and removes duplicates.
///
/// Records are stably sorted by (normalized DOI, normalized title). The first
/// record of each non-empty DOI is kept; among the records with an empty DOI
/// the first record of each normalized title is kept.
pub fn merge_and_deduplicate(record_lists: Vec<Vec<MetadataRecord>>) -> Vec<MetadataRecord> {
    let combined: Vec<MetadataRecord> = record_lists.into_iter().flatten().collect();
    if combined.is_empty() {
        warn!("no records provided to merge_and_deduplicate");
        return Vec::new();
    }
    let before = combined.len();
    let out = deduplicate(combined);
    info!(before, after = out.len(), "deduplicated records");
    out
}

pub fn deduplicate(records: Vec<MetadataRecord>) -> Vec<MetadataRecord> {
    let mut keyed: Vec<(String, String, MetadataRecord)> = records
        .into_iter()
        .map(|r| (normalize_key(&r.doi), normalize_key(&r.title), r))
        .collect();
    // slice::sort_by is stable
    keyed.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));

    let mut keep = vec![false; keyed.len()];
    let mut seen_dois = HashSet::new();
    for (i, (doi, _, _)) in keyed.iter().enumerate() {
        if !doi.is_empty() && seen_dois.insert(doi.clone()) {
            keep[i] = true;
        }
    }
    let mut seen_titles = HashSet::new();
    for (i, (doi, title, _)) in keyed.iter().enumerate() {
        if doi.is_empty() && seen_titles.insert(title.clone()) {
            keep[i] = true;
        }
    }
    keyed
        .into_iter()
        .zip(keep)
        .filter_map(|((_, _, r), k)| k.then_some(r))
        .collect()
}

fn is_blank(s: &str) -> bool {
    s.trim().is_empty()
}

/// Merges enrichment metadata into a record without overwriting existing data.
pub fn enrich(
    record: &MetadataRecord,
    entry: &EnrichmentEntry,
) -> Result<MetadataRecord, RecordsError> {
    if normalize_key(&record.doi) != normalize_key(&entry.doi) {
        return Err(RecordsError::DoiMismatch {
            record: record.doi.clone(),
            entry: entry.doi.clone(),
        });
    }
    let mut out = record.clone();
    if is_blank(&out.abstract_text) {
        if let Some(a) = &entry.abstract_text {
            out.abstract_text = a.clone();
        }
    }
    if is_blank(&out.item_type) || out.item_type == "N/A" {
        if let Some(t) = &entry.item_type {
            out.item_type = t.clone();
        }
    }
    if let Some(c) = entry.citation_count {
        out.citation_count = c.max(0) as u64;
    }
    if entry.primary_topic.is_some() {
        out.primary_topic = entry.primary_topic.clone();
    }
    if entry.is_published.is_some() {
        out.is_published = entry.is_published;
    }
    if entry.is_retracted.is_some() {
        out.is_retracted = entry.is_retracted;
    }
    if let Some(id) = &entry.open_alex_id {
        out.open_alex_id = id.clone();
    }
    Ok(out)
}

/// Builds a DOI-keyed enrichment table, rejecting duplicate DOIs.
pub fn enrichment_table(
    entries: Vec<EnrichmentEntry>,
) -> Result<HashMap<String, EnrichmentEntry>, RecordsError> {
    let mut table = HashMap::with_capacity(entries.len());
    for e in entries {
        let key = normalize_key(&e.doi);
        if table.contains_key(&key) {
            return Err(RecordsError::DuplicateEnrichment(e.doi));
        }
        table.insert(key, e);
    }
    Ok(table)
}

/// Enriches every record that has a matching entry; others are returned as-is.
pub fn enrich_all(
    records: &[MetadataRecord],
    entries: Vec<EnrichmentEntry>,
) -> Result<Vec<MetadataRecord>, RecordsError> {
    let table = enrichment_table(entries)?;
    records
        .iter()
        .map(|r| match table.get(&normalize_key(&r.doi)) {
            Some(e) if !is_blank(&r.doi) => enrich(r, e),
            _ => Ok(r.clone()),
        })
        .collect()
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, RecordsError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| RecordsError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RecordsError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| RecordsError::Parse {
            path: display.clone(),
            line: i + 1,
            source,
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RecordsError> {
    let io_err = |source| RecordsError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)
}
