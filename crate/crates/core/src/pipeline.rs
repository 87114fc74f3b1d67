//! Stage driver: each stage reads the previous stage's artifact from the work
//! directory and writes its own.

use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::chunking::{ChunkSpec, Tokenizer, WhitespaceTokenizer};
use crate::extraction::{
    extract_records, keyword_extractor_from_dictionaries, parse_field_specs, ExtractionCache, ExtractionError,
    Extractor, ScriptedExtractor,
};
use crate::fetcher::{
    rate_limited_execute, Clock, DirSink, FetchConfig, FetchOutcome, FetchStatus, FetchTask, FixtureTransport,
    RateLimit, SimulatedClock, SystemClock,
};
use crate::graph::{apply_field_mappings, query_method_distribution, upsert_article, FieldMappings, Graph, GraphError, MethodQuery};
use crate::index::{
    build_chunk_collection, build_structured_collection, pdf_collection_name, structured_collection_name, Collection,
    FusionConfig, HybridRetriever, IndexConfig, IndexError,
};
use crate::layout::{fix_page, ClusterLabel, LayoutConfig, LayoutError, PageLayout};
use crate::qaloop::{
    build_context, enhance_query, run_loop, AgentsConfig, Answer, ContextItem, KeywordReformulator, LoopConfig,
    QaError, Reformulation, Reformulator, ScriptedReformulator, SessionLog,
};
use crate::records::{enrich_all, merge_and_deduplicate, read_jsonl, write_jsonl, FieldValue, MetadataRecord, RecordsError};
use crate::topics::{grid_search_with_phrases, Corpus, DefaultNormalizer, GridSpec, LdaModel, TopicsError};
use crate::unify::{DictionaryConfig, EmbeddingProvider, HashEmbedding, TermUnifier, Unifier, UnifyConfig};
use crate::verify::{verify_observation, CanonicalTable, RetrievedChunk, VerificationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Records,
    Fetch,
    Layout,
    Extract,
    Topics,
    Graph,
    Index,
    Ask,
    Verify,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Records,
        Stage::Fetch,
        Stage::Layout,
        Stage::Extract,
        Stage::Topics,
        Stage::Graph,
        Stage::Index,
        Stage::Ask,
        Stage::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Records => "records",
            Stage::Fetch => "fetch",
            Stage::Layout => "layout",
            Stage::Extract => "extract",
            Stage::Topics => "topics",
            Stage::Graph => "graph",
            Stage::Index => "index",
            Stage::Ask => "ask",
            Stage::Verify => "verify",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s.trim().to_lowercase())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact {artifact}: run {hint} first")]
    MissingArtifact { stage: Stage, artifact: PathBuf, hint: String },
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Topics(#[from] TopicsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Qa(#[from] QaError),
}

impl PipelineError {
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordsStageConfig {
    /// Record tables merged in order; earlier tables win duplicates.
    pub inputs: Vec<PathBuf>,
    pub enrichment: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransportConfig {
    Fixture { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchStageConfig {
    pub transport: Option<TransportConfig>,
    pub qps: u32,
    pub concurrency: usize,
    pub email: String,
    /// Use a simulated clock instead of sleeping.
    pub simulated_clock: bool,
}

impl Default for FetchStageConfig {
    fn default() -> Self {
        Self { transport: None, qps: 8, concurrency: 1, email: "user@example.org".into(), simulated_clock: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorConfig {
    Scripted(ScriptedExtractor),
    /// Matches synonym dictionaries (by name) against the text, per field.
    Keyword { fields: IndexMap<String, String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractStageConfig {
    pub fields: Option<PathBuf>,
    pub extractor: Option<ExtractorConfig>,
    pub chunk: ChunkSpec,
    pub parallel: bool,
}

impl Default for ExtractStageConfig {
    fn default() -> Self {
        Self { fields: None, extractor: None, chunk: ChunkSpec::EXTRACTION, parallel: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicsStageConfig {
    pub grid: GridSpec,
    pub keywords_per_topic: usize,
}

impl Default for TopicsStageConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec {
                num_topics: vec![2, 3],
                alpha: vec![],
                eta: vec![0.01],
                iterations: vec![200],
                bigram_threshold: vec![100.0],
                trigram_threshold: vec![100.0],
                seed: 0,
                filter: Default::default(),
                top_n: 10,
            },
            keywords_per_topic: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnifyStageConfig {
    pub dictionaries: Option<PathBuf>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphStageConfig {
    /// Field-to-entity mapping file; the built-in mapping is used when unset.
    pub mappings: Option<PathBuf>,
    pub method_query: Option<MethodQuery>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    Hash { dimension: usize },
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Hash { dimension: HashEmbedding::DEFAULT_DIMENSION }
    }
}

impl EmbeddingConfig {
    pub fn build(&self) -> HashEmbedding {
        match *self {
            EmbeddingConfig::Hash { dimension } => HashEmbedding::new(dimension),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexStageConfig {
    pub index: IndexConfig,
    pub fusion: FusionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AskStageConfig {
    pub queries: Vec<String>,
    pub agents: Option<PathBuf>,
    pub reformulator: Option<Reformulation>,
    pub max_iterations: usize,
    pub retrieval_limit: usize,
    pub max_graph_items: usize,
}

impl Default for AskStageConfig {
    fn default() -> Self {
        Self {
            queries: Vec::new(),
            agents: None,
            reformulator: None,
            max_iterations: LoopConfig::default().max_iterations,
            retrieval_limit: 10,
            max_graph_items: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub kb_prefix: String,
    pub work_dir: PathBuf,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub records: RecordsStageConfig,
    #[serde(default)]
    pub fetch: FetchStageConfig,
    #[serde(default)]
    pub layout: LayoutConfig,
    #[serde(default)]
    pub extract: ExtractStageConfig,
    #[serde(default)]
    pub topics: TopicsStageConfig,
    #[serde(default)]
    pub unify: UnifyStageConfig,
    #[serde(default)]
    pub graph: GraphStageConfig,
    #[serde(default)]
    pub index: IndexStageConfig,
    #[serde(default)]
    pub ask: AskStageConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads a config file; relative paths are taken relative to its folder.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.work_dir);
        self.records.inputs.iter_mut().for_each(|p| resolve(base, p));
        if let Some(p) = &mut self.records.enrichment {
            resolve(base, p);
        }
        if let Some(TransportConfig::Fixture { dir }) = &mut self.fetch.transport {
            resolve(base, dir);
        }
        for p in [&mut self.extract.fields, &mut self.unify.dictionaries, &mut self.graph.mappings, &mut self.ask.agents]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.kb_prefix.trim().is_empty() {
            return bad("kb_prefix must be non-empty".into());
        }
        if self.kb_prefix.chars().any(|c| !(c.is_ascii_alphanumeric() || c == '_' || c == '-')) {
            return bad(format!("kb_prefix {:?} may only contain ASCII letters, digits, '_' and '-'", self.kb_prefix));
        }
        if self.fetch.qps == 0 {
            return bad("fetch.qps must be positive".into());
        }
        if self.ask.max_iterations == 0 {
            return bad("ask.max_iterations must be at least 1".into());
        }
        if let EmbeddingConfig::Hash { dimension: 0 } = self.embedding {
            return bad("embedding dimension must be positive".into());
        }
        self.extract.chunk.validate().map_err(|e| PipelineError::Config(format!("extract.chunk: {e}")))?;
        self.index.index.chunk.validate().map_err(|e| PipelineError::Config(format!("index.chunk: {e}")))?;
        self.index.fusion.validate().map_err(|e| PipelineError::Config(format!("fusion: {e}")))?;
        if self.topics.grid.num_topics.is_empty() {
            return bad("topics.grid.num_topics must list at least one value".into());
        }
        Ok(())
    }

    pub fn artifacts(&self) -> Artifacts {
        Artifacts { root: self.work_dir.clone(), kb: self.kb_prefix.clone() }
    }
}

/// Artifact locations inside the work directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub root: PathBuf,
    pub kb: String,
}

impl Artifacts {
    pub fn records(&self) -> PathBuf {
        self.root.join("records.jsonl")
    }
    pub fn fetch_outcomes(&self) -> PathBuf {
        self.root.join("fetch").join("outcomes.jsonl")
    }
    pub fn pdf_dir(&self) -> PathBuf {
        self.root.join("fetch").join("pdfs")
    }
    pub fn fixed_pages_dir(&self) -> PathBuf {
        self.root.join("layout")
    }
    pub fn documents(&self) -> PathBuf {
        self.root.join("documents.jsonl")
    }
    pub fn extracted(&self) -> PathBuf {
        self.root.join("extracted.jsonl")
    }
    pub fn extraction_cache(&self) -> PathBuf {
        self.root.join("extraction_cache.json")
    }
    pub fn extraction_failures(&self) -> PathBuf {
        self.root.join("extraction_failures.jsonl")
    }
    pub fn topic_model(&self) -> PathBuf {
        self.root.join("topic_model.json")
    }
    pub fn topics(&self) -> PathBuf {
        self.root.join("topics.jsonl")
    }
    pub fn graph(&self) -> PathBuf {
        self.root.join("graph.json")
    }
    pub fn method_distribution(&self) -> PathBuf {
        self.root.join("method_distribution.json")
    }
    pub fn collection(&self, name: &str) -> PathBuf {
        self.root.join("index").join(format!("{name}.jsonl"))
    }
    pub fn sessions_root(&self) -> PathBuf {
        self.root.join("sessions")
    }
    pub fn ask_summary(&self) -> PathBuf {
        self.root.join("ask_sessions.jsonl")
    }
    pub fn verification(&self) -> PathBuf {
        self.root.join("verification_report.json")
    }
}

fn require(stage: Stage, path: &Path, hint: &str) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact { stage, artifact: path.to_path_buf(), hint: hint.to_string() })
    }
}

fn require_input(what: &str, p: &Option<PathBuf>) -> Result<PathBuf, PipelineError> {
    let p = p.clone().ok_or_else(|| PipelineError::Config(format!("{what} is not configured")))?;
    if !p.exists() {
        return Err(PipelineError::Config(format!("{what} {} does not exist", p.display())));
    }
    Ok(p)
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn load_dictionaries(cfg: &PipelineConfig) -> Result<DictionaryConfig, PipelineError> {
    match &cfg.unify.dictionaries {
        Some(_) => read_json(&require_input("unify.dictionaries", &cfg.unify.dictionaries)?),
        None => Ok(DictionaryConfig::new()),
    }
}

fn load_mappings(cfg: &PipelineConfig) -> Result<FieldMappings, PipelineError> {
    let m: FieldMappings = match &cfg.graph.mappings {
        Some(_) => read_json(&require_input("graph.mappings", &cfg.graph.mappings)?)?,
        None => FieldMappings::cardio_ozone(),
    };
    m.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok(m)
}

fn unify_config(cfg: &PipelineConfig) -> UnifyConfig {
    let mut u = UnifyConfig::default();
    if let Some(t) = cfg.unify.threshold {
        u.threshold = t;
    }
    u
}

/// Summary line written per question by the ask stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskSummary {
    pub query: String,
    pub session_id: String,
    pub session_dir: PathBuf,
    pub iterations: usize,
    pub validated: bool,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionVerification {
    pub session_id: String,
    pub query: String,
    pub reports: Vec<VerificationReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutSummary {
    pub documents: usize,
    pub pages: usize,
    pub masks: usize,
}

/// Runs the requested stages in pipeline order.
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[Stage]) -> Result<(), PipelineError> {
    cfg.validate()?;
    let mut ordered: Vec<Stage> = stages.to_vec();
    ordered.sort();
    ordered.dedup();
    std::fs::create_dir_all(&cfg.work_dir)?;
    for stage in ordered {
        info!(%stage, "running stage");
        match stage {
            Stage::Records => stage_records(cfg)?,
            Stage::Fetch => stage_fetch(cfg)?,
            Stage::Layout => stage_layout(cfg).map(|_| ())?,
            Stage::Extract => stage_extract(cfg)?,
            Stage::Topics => stage_topics(cfg)?,
            Stage::Graph => stage_graph(cfg)?,
            Stage::Index => stage_index(cfg)?,
            Stage::Ask => stage_ask(cfg).map(|_| ())?,
            Stage::Verify => stage_verify(cfg).map(|_| ())?,
        }
    }
    Ok(())
}

pub fn stage_records(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    if cfg.records.inputs.is_empty() {
        return Err(PipelineError::Config("records.inputs must list at least one record table".into()));
    }
    let mut tables = Vec::new();
    for p in &cfg.records.inputs {
        if !p.exists() {
            return Err(PipelineError::Config(format!("record table {} does not exist", p.display())));
        }
        tables.push(read_jsonl::<MetadataRecord>(p)?);
    }
    let mut merged = merge_and_deduplicate(tables);
    if let Some(e) = &cfg.records.enrichment {
        let entries = read_jsonl(&require_input("records.enrichment", &Some(e.clone()))?)?;
        merged = enrich_all(&merged, entries)?;
    }
    let a = cfg.artifacts();
    write_jsonl(&a.records(), &merged)?;
    info!(records = merged.len(), "records merged");
    Ok(())
}

pub fn stage_fetch(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let a = cfg.artifacts();
    require(Stage::Fetch, &a.records(), "records")?;
    let Some(TransportConfig::Fixture { dir }) = &cfg.fetch.transport else {
        return Err(PipelineError::Config("fetch.transport is not configured".into()));
    };
    if !dir.is_dir() {
        return Err(PipelineError::Config(format!("fixture directory {} does not exist", dir.display())));
    }
    let records: Vec<MetadataRecord> = read_jsonl(&a.records())?;
    let tasks: Vec<FetchTask> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.doi.trim().is_empty())
        .map(|(i, r)| FetchTask { row_idx: i, doi: r.doi.clone(), title: r.title.clone() })
        .collect();
    let limit = RateLimit::new(cfg.fetch.qps).ok_or_else(|| PipelineError::Config("fetch.qps must be positive".into()))?;
    let fc = FetchConfig { limit, max_concurrency: cfg.fetch.concurrency.max(1), email: cfg.fetch.email.clone() };
    let transport = FixtureTransport::new(dir);
    let sink = DirSink::new(a.pdf_dir());
    let simulated = SimulatedClock::new();
    let system = SystemClock::default();
    let clock: &dyn Clock = if cfg.fetch.simulated_clock { &simulated } else { &system };
    let run = rate_limited_execute(&tasks, &fc, &transport, &sink, clock);
    let outcomes: Vec<FetchOutcome> = run
        .outcomes
        .into_iter()
        .map(|mut o| {
            o.pdf_path = o.pdf_path.map(|p| p.strip_prefix(&a.root).map(Path::to_path_buf).unwrap_or(p));
            o
        })
        .collect();
    let saved = outcomes.iter().filter(|o| o.status == FetchStatus::Saved).count();
    write_jsonl(&a.fetch_outcomes(), &outcomes)?;
    info!(tasks = tasks.len(), saved, calls = run.calls.len(), "fetch done");
    Ok(())
}

/// Pages stored as downloaded bytes: a JSON list of pages or a single page.
pub fn parse_pages(bytes: &[u8]) -> Result<Vec<PageLayout>, serde_json::Error> {
    match serde_json::from_slice::<Vec<PageLayout>>(bytes) {
        Ok(v) => Ok(v),
        Err(_) => serde_json::from_slice::<PageLayout>(bytes).map(|p| vec![p]),
    }
}

fn apply_layout_text(record: &mut MetadataRecord, pages: &[PageLayout], tok: &dyn Tokenizer) -> Result<(), PipelineError> {
    let mut text = Vec::new();
    let mut tables = Vec::new();
    let mut equations = Vec::new();
    for (p, page) in pages.iter().enumerate() {
        let mut clusters = page.clusters.clone();
        clusters.sort_by(|a, b| a.bbox.t.total_cmp(&b.bbox.t).then(a.bbox.l.total_cmp(&b.bbox.l)).then(a.id.cmp(&b.id)));
        for c in clusters {
            let body = c.all_cells().iter().map(|cell| cell.text.as_str()).collect::<Vec<_>>().join(" ");
            match c.label {
                ClusterLabel::Picture | ClusterLabel::PageHeader | ClusterLabel::PageFooter => {}
                ClusterLabel::Table => tables.push(serde_json::json!({"page": p, "cluster_id": c.id, "text": body})),
                ClusterLabel::Formula => {
                    equations.push(serde_json::json!({
                        "page": p,
                        "cluster_id": c.id,
                        "number": crate::layout::extract_formula_number(&c),
                        "text": body,
                    }));
                    text.push(body);
                }
                _ if !body.trim().is_empty() => text.push(body),
                _ => {}
            }
        }
    }
    record.full_text = text.join("\n");
    record.tables_json = serde_json::to_string(&tables)?;
    record.equations_json = serde_json::to_string(&equations)?;
    record.token_count = tok.encode(&record.full_text).map(|t| t.len() as u64).unwrap_or(0);
    Ok(())
}

pub fn stage_layout(cfg: &PipelineConfig) -> Result<LayoutSummary, PipelineError> {
    let a = cfg.artifacts();
    require(Stage::Layout, &a.records(), "records")?;
    require(Stage::Layout, &a.fetch_outcomes(), "layout input preparation (the fetch stage)")?;
    let mut records: Vec<MetadataRecord> = read_jsonl(&a.records())?;
    let outcomes: Vec<FetchOutcome> = read_jsonl(&a.fetch_outcomes())?;
    let tok = WhitespaceTokenizer;
    let mut summary = LayoutSummary::default();
    for o in outcomes.iter().filter(|o| o.status == FetchStatus::Saved) {
        let (Some(rel), Some(record)) = (&o.pdf_path, records.get_mut(o.row_idx)) else { continue };
        let path = a.root.join(rel);
        let bytes = std::fs::read(&path)?;
        let pages = match parse_pages(&bytes) {
            Ok(p) => p,
            Err(e) => {
                warn!(path = %path.display(), error = %e, "unreadable page clusters, document skipped");
                record.error = Some(format!("layout: {e}"));
                continue;
            }
        };
        let mut fixed = Vec::with_capacity(pages.len());
        for page in &pages {
            let f = fix_page(page, &cfg.layout)?;
            summary.masks += f.masks.len();
            fixed.push(f);
        }
        summary.pages += fixed.len();
        summary.documents += 1;
        write_json(&a.fixed_pages_dir().join(format!("doc-{}.json", o.row_idx)), &fixed)?;
        let layouts: Vec<PageLayout> = fixed.into_iter().map(|f| f.layout).collect();
        record.pdf_path = Some(rel.clone());
        apply_layout_text(record, &layouts, &tok)?;
    }
    write_jsonl(&a.documents(), &records)?;
    info!(documents = summary.documents, pages = summary.pages, "layout done");
    Ok(summary)
}

fn build_extractor(cfg: &PipelineConfig) -> Result<Box<dyn Extractor>, PipelineError> {
    match &cfg.extract.extractor {
        Some(ExtractorConfig::Scripted(s)) => Ok(Box::new(s.clone())),
        Some(ExtractorConfig::Keyword { fields }) => {
            let dicts = load_dictionaries(cfg)?;
            if let Some(missing) = fields.values().find(|d| !dicts.contains_key(*d)) {
                return Err(PipelineError::Config(format!("extractor references unknown dictionary {missing}")));
            }
            Ok(Box::new(keyword_extractor_from_dictionaries(fields, &dicts)))
        }
        None => Err(PipelineError::Config("extract.extractor is not configured".into())),
    }
}

pub fn stage_extract(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let a = cfg.artifacts();
    require(Stage::Extract, &a.documents(), "layout")?;
    let specs = parse_field_specs(&std::fs::read_to_string(require_input("extract.fields", &cfg.extract.fields)?)?)
        .map_err(|e| PipelineError::Config(format!("field specs: {e}")))?;
    let extractor = build_extractor(cfg)?;
    let mut records: Vec<MetadataRecord> = read_jsonl(&a.documents())?;
    // Documents without a parsed PDF are extracted from their abstract.
    let mut work: Vec<MetadataRecord> = records
        .iter()
        .map(|r| {
            let mut w = r.clone();
            if w.full_text.trim().is_empty() {
                w.full_text = format!("{}\n{}", r.title, r.abstract_text);
            }
            w
        })
        .collect();
    let cache = ExtractionCache::load(&a.extraction_cache())?;
    let outcomes = extract_records(
        &mut work,
        &specs,
        extractor.as_ref(),
        &cache,
        &WhitespaceTokenizer,
        cfg.extract.chunk,
        cfg.extract.parallel,
    )?;
    for (r, w) in records.iter_mut().zip(work) {
        r.extracted_fields = w.extracted_fields;
        r.error = w.error;
    }
    let failures: Vec<serde_json::Value> = outcomes
        .iter()
        .enumerate()
        .flat_map(|(i, o)| o.failures.iter().map(move |f| serde_json::json!({"doc_idx": i, "failure": f})))
        .collect();
    cache.save(&a.extraction_cache())?;
    write_jsonl(&a.extraction_failures(), &failures)?;
    write_jsonl(&a.extracted(), &records)?;
    info!(documents = records.len(), failures = failures.len(), cache = cache.len(), "extraction done");
    Ok(())
}

/// Topic model artifact: the selected model plus its evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicArtifact {
    pub model: LdaModel,
    pub topic_coherence: Vec<f64>,
    pub mean_coherence: f64,
    pub top_words: Vec<Vec<String>>,
    pub dominant_topics: Vec<usize>,
    pub candidates: Vec<crate::topics::CandidateScore>,
}

fn topic_text(r: &MetadataRecord) -> String {
    [r.title.as_str(), r.abstract_text.as_str(), r.full_text.as_str()].join("\n")
}

/// Grid-searches LDA over the records' text and annotates each record with
/// its dominant topic, topic keywords and a short label.
pub fn train_topics(records: &mut [MetadataRecord], cfg: &TopicsStageConfig) -> Result<TopicArtifact, PipelineError> {
    let texts: Vec<String> = records.iter().map(topic_text).collect();
    let corpus = Corpus::from_texts(texts.iter().map(String::as_str), &DefaultNormalizer);
    let grid = &cfg.grid;
    let result = grid_search_with_phrases(&corpus, grid.filter, &grid.expand(), grid.top_n)?;
    let model = result.best;
    let n_kw = cfg.keywords_per_topic.max(1);
    let top_words: Vec<Vec<String>> = (0..model.num_topics()).map(|t| model.top_words(t, n_kw)).collect();
    let dominant = model.dominant_topics();
    for (r, &t) in records.iter_mut().zip(&dominant) {
        r.extracted_fields.insert("dominant_topic".into(), FieldValue::Text(t.to_string()));
        r.extracted_fields.insert("topic_keywords".into(), FieldValue::List(top_words[t].clone()));
        r.extracted_fields
            .insert("topic_label".into(), FieldValue::Text(top_words[t].iter().take(3).cloned().collect::<Vec<_>>().join(", ")));
    }
    let best = &result.candidates[result.best_index];
    Ok(TopicArtifact {
        topic_coherence: best.topic_coherences.clone(),
        mean_coherence: best.mean_coherence,
        top_words,
        dominant_topics: dominant,
        candidates: result.candidates.clone(),
        model,
    })
}

pub fn stage_topics(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let a = cfg.artifacts();
    require(Stage::Topics, &a.extracted(), "extract")?;
    let mut records: Vec<MetadataRecord> = read_jsonl(&a.extracted())?;
    let artifact = train_topics(&mut records, &cfg.topics)?;
    write_json(&a.topic_model(), &artifact)?;
    write_jsonl(&a.topics(), &records)?;
    info!(topics = artifact.model.num_topics(), coherence = artifact.mean_coherence, "topics done");
    Ok(())
}

pub fn stage_graph(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let a = cfg.artifacts();
    require(Stage::Graph, &a.topics(), "topics")?;
    let records: Vec<MetadataRecord> = read_jsonl(&a.topics())?;
    let mappings = load_mappings(cfg)?;
    let dicts = load_dictionaries(cfg)?;
    let provider = cfg.embedding.build();
    let (unifier, failures) = Unifier::build(&dicts, &provider, unify_config(cfg));
    for (term, e) in &failures {
        warn!(%term, error = %e, "dictionary phrase could not be embedded");
    }
    let unifier_ref: Option<&dyn TermUnifier> = if dicts.is_empty() { None } else { Some(&unifier) };
    let mut g = Graph::new();
    for r in records.iter().filter(|r| !r.doi.trim().is_empty()) {
        upsert_article(&mut g, r)?;
        apply_field_mappings(&mut g, r, &mappings, unifier_ref)?;
    }
    g.save(&a.graph())?;
    let q = cfg.graph.method_query.clone().unwrap_or_default();
    write_json(&a.method_distribution(), &query_method_distribution(&g, &q))?;
    info!(nodes = g.node_count(), edges = g.edge_count(), "graph built");
    Ok(())
}

pub fn stage_index(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let a = cfg.artifacts();
    require(Stage::Index, &a.topics(), "topics")?;
    let records: Vec<MetadataRecord> = read_jsonl(&a.topics())?;
    let provider = cfg.embedding.build();
    let pdf = build_chunk_collection(
        &pdf_collection_name(&cfg.kb_prefix),
        &records,
        &provider,
        &WhitespaceTokenizer,
        &cfg.index.index,
    )?;
    let structured = build_structured_collection(&structured_collection_name(&cfg.kb_prefix), &records, &provider, &cfg.index.index)?;
    for c in [&pdf, &structured] {
        c.save_jsonl(&a.collection(c.name()))?;
    }
    Ok(())
}

struct AskInputs {
    records: Vec<MetadataRecord>,
    graph: Graph,
    collections: Vec<Collection>,
}

fn load_ask_inputs(cfg: &PipelineConfig, stage: Stage) -> Result<AskInputs, PipelineError> {
    let a = cfg.artifacts();
    require(stage, &a.topics(), "topics")?;
    require(stage, &a.graph(), "graph")?;
    let dim = cfg.embedding.build().dimension();
    let mut collections = Vec::new();
    for name in [pdf_collection_name(&cfg.kb_prefix), structured_collection_name(&cfg.kb_prefix)] {
        let path = a.collection(&name);
        require(stage, &path, "index")?;
        collections.push(Collection::load_jsonl(&name, dim, &path)?);
    }
    Ok(AskInputs { records: read_jsonl(&a.topics())?, graph: Graph::load(&a.graph())?, collections })
}

/// Answers one question against the built knowledge base and persists the
/// session folder.
pub fn ask(cfg: &PipelineConfig, query: &str, agents: &AgentsConfig) -> Result<AskSummary, PipelineError> {
    let inputs = load_ask_inputs(cfg, Stage::Ask)?;
    ask_with(cfg, &inputs, query, agents)
}

fn ask_with(cfg: &PipelineConfig, inputs: &AskInputs, query: &str, agents: &AgentsConfig) -> Result<AskSummary, PipelineError> {
    let a = cfg.artifacts();
    let provider = cfg.embedding.build();
    let dicts = load_dictionaries(cfg)?;
    let mappings = load_mappings(cfg)?;
    let (unifier, _) = Unifier::build(&dicts, &provider, unify_config(cfg));
    let unifier_ref: Option<&dyn TermUnifier> = if dicts.is_empty() { None } else { Some(&unifier) };
    let reformulator: Box<dyn Reformulator> = match &cfg.ask.reformulator {
        Some(r) => Box::new(ScriptedReformulator { output: Some(r.clone()) }),
        None => Box::new(KeywordReformulator),
    };
    let enhancement = enhance_query(query, reformulator.as_ref(), unifier_ref, &mappings, Some(&inputs.graph));
    let retriever = HybridRetriever {
        collections: inputs.collections.iter().collect(),
        graph: Some(&inputs.graph),
        provider: &provider,
        fusion: cfg.index.fusion,
    };
    let trace =
        retriever.retrieve(&enhancement.enhanced_query, &enhancement.keywords, &enhancement.entities, cfg.ask.retrieval_limit)?;
    let mut log = SessionLog::new(&cfg.kb_prefix, query).with_enhancement(&enhancement);
    log.context = build_context(&trace, &inputs.records, Some(&inputs.graph), &enhancement, cfg.ask.max_graph_items);
    log.retrieval = Some(trace);
    let canonical = CanonicalTable::new(&inputs.records);
    let (generator, evaluator) = agents.build();
    let loop_cfg = LoopConfig { max_iterations: cfg.ask.max_iterations };
    let log = match run_loop(log, generator.as_ref(), evaluator.as_ref(), loop_cfg, &canonical)? {
        Ok(outcome) => outcome.log,
        Err(abort) => {
            warn!(error = %abort.error, "qa loop aborted; partial session kept");
            abort.log
        }
    };
    let dir = log.persist(&a.sessions_root())?;
    Ok(AskSummary {
        query: query.to_string(),
        session_id: log.session_id.clone(),
        session_dir: dir.strip_prefix(&a.root).map(Path::to_path_buf).unwrap_or(dir),
        iterations: log.iterations.len(),
        validated: log.validated,
        aborted: log.aborted.clone(),
    })
}

fn load_agents(cfg: &PipelineConfig) -> Result<AgentsConfig, PipelineError> {
    match &cfg.ask.agents {
        Some(_) => read_json(&require_input("ask.agents", &cfg.ask.agents)?)
            .map_err(|e| PipelineError::Config(format!("agents: {e}"))),
        None => Ok(AgentsConfig::default()),
    }
}

pub fn stage_ask(cfg: &PipelineConfig) -> Result<Vec<AskSummary>, PipelineError> {
    if cfg.ask.queries.is_empty() {
        return Err(PipelineError::Config("ask.queries must list at least one question".into()));
    }
    let agents = load_agents(cfg)?;
    let inputs = load_ask_inputs(cfg, Stage::Ask)?;
    let summaries = cfg
        .ask
        .queries
        .iter()
        .map(|q| ask_with(cfg, &inputs, q, &agents))
        .collect::<Result<Vec<_>, _>>()?;
    write_jsonl(&cfg.artifacts().ask_summary(), &summaries)?;
    Ok(summaries)
}

#[derive(Deserialize)]
struct PersistedRetrieval {
    context: Vec<ContextItem>,
}

#[derive(Deserialize)]
struct PersistedFinal {
    answer: Option<Answer>,
}

/// Re-checks every session's final answer against the canonical records.
pub fn stage_verify(cfg: &PipelineConfig) -> Result<Vec<SessionVerification>, PipelineError> {
    let a = cfg.artifacts();
    require(Stage::Verify, &a.ask_summary(), "ask")?;
    require(Stage::Verify, &a.topics(), "topics")?;
    let records: Vec<MetadataRecord> = read_jsonl(&a.topics())?;
    let canonical = CanonicalTable::new(&records);
    let summaries: Vec<AskSummary> = read_jsonl(&a.ask_summary())?;
    let mut out = Vec::new();
    for s in summaries {
        let dir = a.root.join(&s.session_dir);
        let retrieval: PersistedRetrieval = read_json(&dir.join("retrieval.json"))?;
        let fin: PersistedFinal = read_json(&dir.join("final.json"))?;
        let retrieved: Vec<RetrievedChunk> = retrieval.context.iter().map(ContextItem::as_retrieved).collect();
        let reports = fin
            .answer
            .map(|ans| ans.observations.iter().map(|o| verify_observation(o, &canonical, &retrieved)).collect())
            .unwrap_or_default();
        out.push(SessionVerification { session_id: s.session_id, query: s.query, reports });
    }
    write_json(&a.verification(), &out)?;
    Ok(out)
}
