//! Brute-force vector and keyword indices over chunk payloads, and hybrid
//! retrieval fused with Reciprocal Rank Fusion.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use tracing::{info, warn};

use crate::chunking::{chunk_text, ChunkError, ChunkSpec, Tokenizer};
use crate::graph::{graph_search, Graph, NodeRef};
use crate::records::{FieldMap, MetadataRecord};
use crate::unify::{cosine_similarity, EmbeddingProvider, UnifyError, Vector};

pub const MAX_CHUNKS_PER_DOC: u64 = 10_000;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("chunk index {chunk_idx} of document {doc_idx} would collide with the next document")]
    ChunkOverflow { doc_idx: u64, chunk_idx: u64 },
    #[error("point {id} has dimension {got}, collection `{collection}` expects {expected}")]
    Dimension { collection: String, id: u64, expected: usize, got: usize },
    #[error("query has dimension {got}, collection expects {expected}")]
    QueryDimension { expected: usize, got: usize },
    #[error("collection dimension must be positive")]
    ZeroDimension,
    #[error("keyword needle is empty")]
    EmptyNeedle,
    #[error("invalid fusion config: {0}")]
    Fusion(String),
    #[error(transparent)]
    Embedding(#[from] UnifyError),
    #[error(transparent)]
    Chunking(#[from] ChunkError),
    #[error("{path}:{line}: {source}")]
    Parse { path: String, line: usize, source: serde_json::Error },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// `doc_idx · 10000 + chunk_idx`.
pub fn deterministic_point_id(doc_idx: u64, chunk_idx: u64) -> Result<u64, IndexError> {
    if chunk_idx >= MAX_CHUNKS_PER_DOC {
        return Err(IndexError::ChunkOverflow { doc_idx, chunk_idx });
    }
    Ok(doc_idx * MAX_CHUNKS_PER_DOC + chunk_idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorPoint {
    pub id: u64,
    pub vector: Vector,
    pub payload: Map<String, Value>,
}

impl VectorPoint {
    pub fn content(&self) -> &str {
        self.payload.get("content").and_then(Value::as_str).unwrap_or_default()
    }
}

/// Named cosine collection. Reads may run concurrently; writes are
/// serialized by an internal lock.
#[derive(Debug)]
pub struct Collection {
    name: String,
    dimension: usize,
    points: RwLock<BTreeMap<u64, VectorPoint>>,
}

impl Collection {
    pub fn new(name: impl Into<String>, dimension: usize) -> Result<Self, IndexError> {
        if dimension == 0 {
            return Err(IndexError::ZeroDimension);
        }
        Ok(Self { name: name.into(), dimension, points: RwLock::new(BTreeMap::new()) })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.points.read().expect("collection lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: u64) -> Option<VectorPoint> {
        self.points.read().expect("collection lock").get(&id).cloned()
    }

    /// All points in ascending id order.
    pub fn points(&self) -> Vec<VectorPoint> {
        self.points.read().expect("collection lock").values().cloned().collect()
    }

    /// Inserts or replaces points by id. Either every point is written or,
    /// on a dimension mismatch, none is.
    pub fn upsert_batch(&self, points: Vec<VectorPoint>) -> Result<usize, IndexError> {
        if let Some(p) = points.iter().find(|p| p.vector.len() != self.dimension) {
            return Err(IndexError::Dimension {
                collection: self.name.clone(),
                id: p.id,
                expected: self.dimension,
                got: p.vector.len(),
            });
        }
        let n = points.len();
        let mut guard = self.points.write().expect("collection lock");
        for p in points {
            guard.insert(p.id, p);
        }
        Ok(n)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), IndexError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for p in self.points.read().expect("collection lock").values() {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_jsonl(name: impl Into<String>, dimension: usize, path: &Path) -> Result<Self, IndexError> {
        let coll = Self::new(name, dimension)?;
        let mut points = Vec::new();
        for (i, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            points.push(serde_json::from_str(&line).map_err(|source| IndexError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })?);
        }
        coll.upsert_batch(points)?;
        Ok(coll)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Semantic,
    Keyword,
    Graph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList<T> {
    pub source: Source,
    pub entries: Vec<T>,
    /// Per-entry similarity, when the source produces one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
}

impl<T> RankedList<T> {
    pub fn new(source: Source, entries: Vec<T>) -> Self {
        Self { source, entries, scores: Vec::new() }
    }
}

/// Top `k` points by cosine similarity, ties by ascending id.
pub fn semantic_search(coll: &Collection, query: &[f64], k: usize) -> Result<RankedList<u64>, IndexError> {
    if query.len() != coll.dimension() {
        return Err(IndexError::QueryDimension { expected: coll.dimension(), got: query.len() });
    }
    let guard = coll.points.read().expect("collection lock");
    let mut scored: Vec<(u64, f64)> = guard
        .values()
        .map(|p| {
            let s = match cosine_similarity(query, &p.vector) {
                Ok(s) => s,
                Err(UnifyError::ZeroVector) => 0.0,
                Err(_) => unreachable!("dimensions checked"),
            };
            (p.id, s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(RankedList {
        source: Source::Semantic,
        scores: scored.iter().map(|s| s.1).collect(),
        entries: scored.into_iter().map(|s| s.0).collect(),
    })
}

/// Points whose content contains `needle` case-insensitively, by ascending
/// id, at most `k`.
pub fn keyword_search(coll: &Collection, needle: &str, k: usize) -> Result<RankedList<u64>, IndexError> {
    if needle.trim().is_empty() {
        return Err(IndexError::EmptyNeedle);
    }
    let needle = needle.to_lowercase();
    let guard = coll.points.read().expect("collection lock");
    let entries =
        guard.values().filter(|p| p.content().to_lowercase().contains(&needle)).map(|p| p.id).take(k).collect();
    Ok(RankedList::new(Source::Keyword, entries))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub k: u32,
    pub top_k: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { k: 60, top_k: 20 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.k < 1 {
            return Err(IndexError::Fusion("K must be at least 1".into()));
        }
        if self.top_k < 1 {
            return Err(IndexError::Fusion("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fused<T> {
    pub id: T,
    pub score: f64,
}

/// Σ over sources of `1 / (K + rank)` with 1-based ranks; entries past
/// `top_k` contribute nothing. Sorted by score descending, then by the
/// highest-priority source the id appears in, then by id.
pub fn rrf_fuse<T: Clone + Ord + Hash>(lists: &[RankedList<T>], cfg: FusionConfig) -> Vec<Fused<T>> {
    let mut ranks: HashMap<&T, (Vec<usize>, Source)> = HashMap::new();
    for list in lists {
        let mut seen = HashSet::new();
        let mut rank = 0;
        for id in &list.entries {
            if !seen.insert(id) {
                warn!(source = ?list.source, "duplicate id in ranked list ignored");
                continue;
            }
            rank += 1;
            if rank > cfg.top_k {
                break;
            }
            let e = ranks.entry(id).or_insert((Vec::new(), list.source));
            e.0.push(rank);
            e.1 = e.1.min(list.source);
        }
    }
    let k = f64::from(cfg.k);
    let mut out: Vec<(Fused<T>, Source)> = ranks
        .into_iter()
        .map(|(id, (mut rs, src))| {
            rs.sort_unstable();
            let score = rs.iter().map(|&r| 1.0 / (k + r as f64)).sum();
            (Fused { id: id.clone(), score }, src)
        })
        .collect();
    out.sort_by(|a, b| b.0.score.total_cmp(&a.0.score).then(a.1.cmp(&b.1)).then_with(|| a.0.id.cmp(&b.0.id)));
    out.into_iter().map(|(f, _)| f).collect()
}

pub fn pdf_collection_name(kb: &str) -> String {
    format!("{kb}_pdf_chunks")
}

pub fn structured_collection_name(kb: &str) -> String {
    format!("{kb}_structured")
}

/// `ml_methods_used` → `Ml Methods Used`; names with spaces or capitals are
/// kept as written.
pub fn display_field_name(key: &str) -> String {
    if key.contains(' ') || key.chars().any(char::is_uppercase) {
        return key.to_string();
    }
    key.split('_')
        .filter(|w| !w.is_empty())
        .map(|w| {
            let mut c = w.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect::<String>()).unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// One `Field Name: value, value` line per non-empty field.
pub fn structured_content(record: &MetadataRecord) -> String {
    let mut lines = vec![format!("Title: {}", record.title), format!("DOI: {}", record.doi)];
    lines.extend(field_lines(&record.extracted_fields));
    lines.join("\n")
}

pub fn field_lines(fields: &FieldMap) -> Vec<String> {
    fields
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| format!("{}: {}", display_field_name(k), v.items().join(", ")))
        .collect()
}

/// Metadata header, full text and table data, as embedded for the chunk
/// collection.
pub fn document_content(record: &MetadataRecord) -> String {
    let mut s = format!(
        "Title: {}\nDOI: {}\nJournal: {}\nCitations: {}\n\n{}",
        record.title, record.doi, record.journal, record.citation_count, record.full_text
    );
    let tables = record.tables_json.trim();
    if !tables.is_empty() && tables != "[]" {
        s.push_str("\n\nTables: ");
        s.push_str(tables);
    }
    s
}

fn metadata_payload(doc_idx: usize, record: &MetadataRecord) -> Map<String, Value> {
    let mut p = Map::new();
    p.insert("doc_idx".into(), Value::from(doc_idx));
    for (k, v) in [
        ("doi", &record.doi),
        ("title", &record.title),
        ("authors", &record.authors),
        ("journal", &record.journal),
        ("date", &record.date),
        ("zotero_key", &record.zotero_key),
    ] {
        if !v.is_empty() {
            p.insert(k.into(), Value::from(v.as_str()));
        }
    }
    p.insert("citation_count".into(), Value::from(record.citation_count));
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub chunk: ChunkSpec,
    pub embed_batch_size: usize,
    pub upsert_batch_size: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self { chunk: ChunkSpec::INDEXING, embed_batch_size: 25, upsert_batch_size: 256 }
    }
}

fn embed_and_store(
    coll: &Collection,
    items: Vec<(u64, String, Map<String, Value>)>,
    provider: &dyn EmbeddingProvider,
    cfg: &IndexConfig,
) -> Result<(), IndexError> {
    let mut pending = Vec::new();
    for batch in items.chunks(cfg.embed_batch_size.max(1)) {
        let texts: Vec<String> = batch.iter().map(|(_, t, _)| t.clone()).collect();
        let vectors = provider.embed_batch(&texts)?;
        for ((id, _, payload), vector) in batch.iter().zip(vectors) {
            pending.push(VectorPoint { id: *id, vector, payload: payload.clone() });
        }
        if pending.len() >= cfg.upsert_batch_size {
            coll.upsert_batch(std::mem::take(&mut pending))?;
        }
    }
    coll.upsert_batch(pending)?;
    Ok(())
}

/// Chunks every document and stores one point per chunk.
pub fn build_chunk_collection(
    name: &str,
    records: &[MetadataRecord],
    provider: &dyn EmbeddingProvider,
    tok: &dyn Tokenizer,
    cfg: &IndexConfig,
) -> Result<Collection, IndexError> {
    let coll = Collection::new(name, provider.dimension())?;
    let mut items = Vec::new();
    for (doc_idx, record) in records.iter().enumerate() {
        let meta = metadata_payload(doc_idx, record);
        for (chunk_idx, text) in chunk_text(&document_content(record), cfg.chunk, tok)?.into_iter().enumerate() {
            let id = deterministic_point_id(doc_idx as u64, chunk_idx as u64)?;
            let mut payload = meta.clone();
            payload.insert("chunk_idx".into(), Value::from(chunk_idx));
            payload.insert("content".into(), Value::from(text.clone()));
            items.push((id, text, payload));
        }
    }
    embed_and_store(&coll, items, provider, cfg)?;
    info!(collection = name, points = coll.len(), "chunk collection built");
    Ok(coll)
}

/// One point per document built from its structured fields.
pub fn build_structured_collection(
    name: &str,
    records: &[MetadataRecord],
    provider: &dyn EmbeddingProvider,
    cfg: &IndexConfig,
) -> Result<Collection, IndexError> {
    let coll = Collection::new(name, provider.dimension())?;
    let mut items = Vec::new();
    for (doc_idx, record) in records.iter().enumerate() {
        let text = structured_content(record);
        let mut payload = metadata_payload(doc_idx, record);
        payload.insert("chunk_idx".into(), Value::from(0));
        payload.insert("content".into(), Value::from(text.clone()));
        items.push((deterministic_point_id(doc_idx as u64, 0)?, text, payload));
    }
    embed_and_store(&coll, items, provider, cfg)?;
    info!(collection = name, points = coll.len(), "structured collection built");
    Ok(coll)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HitKey {
    pub collection: String,
    pub point_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedHit {
    pub key: HitKey,
    pub score: f64,
    pub doi: String,
    pub title: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub lists: Vec<RankedList<HitKey>>,
    pub fused: Vec<RetrievedHit>,
}

/// Semantic, keyword and graph retrieval over one knowledge base.
pub struct HybridRetriever<'a> {
    pub collections: Vec<&'a Collection>,
    pub graph: Option<&'a Graph>,
    pub provider: &'a dyn EmbeddingProvider,
    pub fusion: FusionConfig,
}

impl HybridRetriever<'_> {
    fn lookup(&self, key: &HitKey) -> Option<VectorPoint> {
        self.collections.iter().find(|c| c.name() == key.collection).and_then(|c| c.get(key.point_id))
    }

    fn semantic(&self, query: &str) -> Result<RankedList<HitKey>, IndexError> {
        let qv = self.provider.embed(query)?;
        let mut scored = Vec::new();
        for c in &self.collections {
            let r = semantic_search(c, &qv, self.fusion.top_k)?;
            for (id, s) in r.entries.into_iter().zip(r.scores) {
                scored.push((HitKey { collection: c.name().to_string(), point_id: id }, s));
            }
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(RankedList {
            source: Source::Semantic,
            scores: scored.iter().map(|s| s.1).collect(),
            entries: scored.into_iter().map(|s| s.0).collect(),
        })
    }

    // Points matching more keywords rank first.
    fn keyword(&self, keywords: &[String]) -> Result<RankedList<HitKey>, IndexError> {
        let mut counts: BTreeMap<HitKey, usize> = BTreeMap::new();
        for kw in keywords.iter().filter(|k| !k.trim().is_empty()) {
            for c in &self.collections {
                for id in keyword_search(c, kw, usize::MAX)?.entries {
                    *counts.entry(HitKey { collection: c.name().to_string(), point_id: id }).or_default() += 1;
                }
            }
        }
        let mut v: Vec<(HitKey, usize)> = counts.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(RankedList::new(Source::Keyword, v.into_iter().map(|x| x.0).collect()))
    }

    // Ranked articles expanded to their chunk points, so the three lists
    // share one id space.
    fn graph(&self, entities: &[NodeRef]) -> RankedList<HitKey> {
        let Some(g) = self.graph else { return RankedList::new(Source::Graph, Vec::new()) };
        let mut entries = Vec::new();
        for (doi, _) in graph_search(g, entities) {
            for c in &self.collections {
                for p in c.points() {
                    if p.payload.get("doi").and_then(Value::as_str) == Some(doi.as_str()) {
                        entries.push(HitKey { collection: c.name().to_string(), point_id: p.id });
                    }
                }
            }
        }
        RankedList::new(Source::Graph, entries)
    }

    pub fn retrieve(
        &self,
        query: &str,
        keywords: &[String],
        entities: &[NodeRef],
        limit: usize,
    ) -> Result<RetrievalTrace, IndexError> {
        self.fusion.validate()?;
        let lists = vec![self.semantic(query)?, self.keyword(keywords)?, self.graph(entities)];
        let fused = rrf_fuse(&lists, self.fusion)
            .into_iter()
            .take(limit)
            .filter_map(|f| {
                let p = self.lookup(&f.id)?;
                let field = |k: &str| p.payload.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
                Some(RetrievedHit {
                    doi: field("doi"),
                    title: field("title"),
                    content: p.content().to_string(),
                    key: f.id,
                    score: f.score,
                })
            })
            .collect();
        Ok(RetrievalTrace { lists, fused })
    }
}
