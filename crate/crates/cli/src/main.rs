use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tracing_subscriber::EnvFilter;

use hysem_core::chunking::{chunk_document, Chunk, ChunkSpec, WhitespaceTokenizer};
use hysem_core::extraction::{parse_field_specs, extract_records, ExtractionCache};
use hysem_core::fetcher::{
    rate_limited_execute, Clock, DirSink, FetchConfig, FetchTask, FixtureTransport, RateLimit, SimulatedClock,
    SystemClock,
};
use hysem_core::graph::{apply_field_mappings, query_method_distribution, upsert_article, FieldMappings, Graph, MethodQuery};
use hysem_core::index::{
    deterministic_point_id, semantic_search, Collection, FusionConfig, HybridRetriever, IndexConfig, VectorPoint,
};
use hysem_core::layout::{fix_page, LayoutConfig, PageLayout};
use hysem_core::pipeline::{
    self, read_json, write_json, AskSummary, EmbeddingConfig, ExtractorConfig, PipelineConfig, PipelineError, Stage,
    TopicsStageConfig,
};
use hysem_core::qaloop::{AgentsConfig, Answer, ContextItem};
use hysem_core::records::{enrich_all, merge_and_deduplicate, read_jsonl, write_jsonl, MetadataRecord};
use hysem_core::topics::GridSpec;
use hysem_core::unify::{DictionaryConfig, EmbeddingProvider, TermUnifier, Unifier, UnifyConfig};
use hysem_core::verify::{verify_observation, CanonicalTable, Observation, RetrievedChunk};

/// Invalid user-supplied configuration or inputs (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct ConfigError(String);

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "hysem", version, about = "Literature synthesis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge, deduplicate and enrich record tables
    #[command(subcommand)]
    Records(RecordsCmd),
    /// Download open-access PDFs under a rate limit
    Fetch(FetchArgs),
    /// Post-process detector page clusters
    #[command(subcommand)]
    Layout(LayoutCmd),
    /// Split documents into overlapping token windows
    Chunk(ChunkArgs),
    /// Extract structured fields from documents
    Extract(ExtractArgs),
    /// Train topic models
    #[command(subcommand)]
    Topics(TopicsCmd),
    /// Map a free-text term to its canonical form
    Unify(UnifyArgs),
    /// Build and query the knowledge graph
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Build and query vector collections
    #[command(subcommand)]
    Index(IndexCmd),
    /// Answer a question against a built knowledge base
    Ask(AskArgs),
    /// Verify the observations of an answer
    Verify(VerifyArgs),
    /// Run pipeline stages from a config file
    Pipeline(PipelineArgs),
}

#[derive(Subcommand)]
enum RecordsCmd {
    Merge {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    Enrich {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        enrichment: PathBuf,
        /// Defaults to rewriting the input file
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FetchArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    fixtures: PathBuf,
    #[arg(long, default_value_t = 8)]
    qps: u32,
    #[arg(long, default_value_t = 32)]
    concurrency: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pdf_dir: PathBuf,
    #[arg(long, default_value = "user@example.org")]
    email: String,
    /// Advance a virtual clock instead of sleeping
    #[arg(long)]
    simulated_clock: bool,
}

#[derive(Subcommand)]
enum LayoutCmd {
    Fix {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        emit_masks: Option<PathBuf>,
        #[command(flatten)]
        overrides: LayoutOverrides,
    },
}

#[derive(Args, Default)]
struct LayoutOverrides {
    #[arg(long)]
    vertical_threshold_factor: Option<f64>,
    #[arg(long)]
    horizontal_overlap_threshold: Option<f64>,
    #[arg(long)]
    padding: Option<f64>,
    #[arg(long)]
    alignment_threshold: Option<f64>,
    #[arg(long)]
    max_alignment_ratio: Option<f64>,
    #[arg(long)]
    unnumbered_max_gap: Option<f64>,
    #[arg(long)]
    mixed_max_gap: Option<f64>,
    #[arg(long)]
    unnumbered_min_overlap: Option<f64>,
    #[arg(long)]
    mixed_min_overlap: Option<f64>,
    #[arg(long)]
    min_area_ratio: Option<f64>,
    #[arg(long)]
    min_cells_threshold: Option<usize>,
    #[arg(long)]
    min_density_threshold: Option<f64>,
    #[arg(long)]
    left_margin_threshold: Option<f64>,
    #[arg(long)]
    min_height_threshold: Option<f64>,
    #[arg(long)]
    mask_top_expansion: Option<f64>,
    #[arg(long)]
    mask_bottom_expansion: Option<f64>,
    #[arg(long)]
    formula_number_pattern: Option<String>,
}

impl LayoutOverrides {
    fn apply(self, c: &mut LayoutConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            vertical_threshold_factor,
            horizontal_overlap_threshold,
            padding,
            alignment_threshold,
            max_alignment_ratio,
            unnumbered_max_gap,
            mixed_max_gap,
            unnumbered_min_overlap,
            mixed_min_overlap,
            min_area_ratio,
            min_cells_threshold,
            min_density_threshold,
            left_margin_threshold,
            min_height_threshold,
            mask_top_expansion,
            mask_bottom_expansion,
            formula_number_pattern
        );
    }
}

#[derive(Args)]
struct ChunkArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = ChunkSpec::INDEXING.max_tokens)]
    max_tokens: usize,
    #[arg(long, default_value_t = ChunkSpec::INDEXING.overlap)]
    overlap: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    fields: PathBuf,
    /// Extractor definition (scripted rules or keyword dictionaries)
    #[arg(long)]
    extractor: PathBuf,
    /// Synonym dictionaries for a keyword extractor
    #[arg(long)]
    dicts: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Defaults to rewriting the input file
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = ChunkSpec::EXTRACTION.max_tokens)]
    max_tokens: usize,
    #[arg(long, default_value_t = ChunkSpec::EXTRACTION.overlap)]
    overlap: usize,
    #[arg(long)]
    parallel: bool,
}

#[derive(Subcommand)]
enum TopicsCmd {
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the records annotated with their dominant topic
        #[arg(long)]
        annotated: Option<PathBuf>,
    },
}

#[derive(Args)]
struct UnifyArgs {
    #[arg(long)]
    dicts: PathBuf,
    #[arg(long)]
    term: String,
    #[arg(long)]
    key: String,
    #[arg(long, default_value_t = UnifyConfig::default().threshold)]
    threshold: f64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
}

#[derive(Subcommand)]
enum GraphCmd {
    Build {
        #[arg(long = "in")]
        input: PathBuf,
        /// Field-to-entity mappings; the built-in mapping when omitted
        #[arg(long)]
        mappings: Option<PathBuf>,
        #[arg(long)]
        dicts: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Query(GraphQuery),
}

#[derive(Subcommand)]
enum GraphQuery {
    /// Methods used by qualifying ozone studies, with article counts
    Methods {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        query: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum IndexCmd {
    Build {
        /// Chunk lines as written by `chunk`
        #[arg(long)]
        chunks: PathBuf,
        #[arg(long, default_value = "test")]
        provider: String,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long)]
        name: String,
        /// Directory for the collection file
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Records used for payload metadata (doi, title, ...)
        #[arg(long)]
        records: Option<PathBuf>,
    },
    Query {
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Fuse semantic and keyword rankings
        #[arg(long)]
        fuse: bool,
        /// Collection files; the collection name is the file stem
        #[arg(long = "collection", num_args = 1.., required = true)]
        collections: Vec<PathBuf>,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long)]
        graph: Option<PathBuf>,
    },
}

#[derive(Args)]
struct AskArgs {
    #[arg(long)]
    config: PathBuf,
    /// Knowledge base prefix; defaults to the config's
    #[arg(long)]
    kb: Option<String>,
    #[arg(long)]
    query: String,
    #[arg(long)]
    agents: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    answers: PathBuf,
    #[arg(long)]
    canonical: PathBuf,
    /// A session's retrieval.json or a list of retrieved chunks
    #[arg(long)]
    retrieved: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated stages; all stages when omitted
    #[arg(long, value_delimiter = ',')]
    stages: Vec<String>,
}

fn load<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    if !path.exists() {
        return Err(config_err(format!("{what} {} does not exist", path.display())));
    }
    read_json(path).map_err(|e| config_err(format!("{what} {}: {e}", path.display())))
}

fn load_records(path: &Path) -> Result<Vec<MetadataRecord>> {
    if !path.exists() {
        return Err(config_err(format!("record table {} does not exist", path.display())));
    }
    read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn cmd_records(cmd: RecordsCmd) -> Result<()> {
    match cmd {
        RecordsCmd::Merge { inputs, out } => {
            let tables = inputs.iter().map(|p| load_records(p)).collect::<Result<Vec<_>>>()?;
            let merged = merge_and_deduplicate(tables);
            write_jsonl(&out, &merged)?;
            println!("{} records", merged.len());
        }
        RecordsCmd::Enrich { input, enrichment, out } => {
            let records = load_records(&input)?;
            if !enrichment.exists() {
                return Err(config_err(format!("enrichment table {} does not exist", enrichment.display())));
            }
            let enriched = enrich_all(&records, read_jsonl(&enrichment)?)?;
            write_jsonl(out.as_ref().unwrap_or(&input), &enriched)?;
            println!("{} records", enriched.len());
        }
    }
    Ok(())
}

fn cmd_fetch(a: FetchArgs) -> Result<()> {
    let records = load_records(&a.input)?;
    if !a.fixtures.is_dir() {
        return Err(config_err(format!("fixture directory {} does not exist", a.fixtures.display())));
    }
    let limit = RateLimit::new(a.qps).ok_or_else(|| config_err("--qps must be positive"))?;
    let tasks: Vec<FetchTask> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.doi.trim().is_empty())
        .map(|(i, r)| FetchTask { row_idx: i, doi: r.doi.clone(), title: r.title.clone() })
        .collect();
    let cfg = FetchConfig { limit, max_concurrency: a.concurrency.max(1), email: a.email };
    let (sim, sys) = (SimulatedClock::new(), SystemClock::default());
    let clock: &dyn Clock = if a.simulated_clock { &sim } else { &sys };
    let run = rate_limited_execute(&tasks, &cfg, &FixtureTransport::new(&a.fixtures), &DirSink::new(&a.pdf_dir), clock);
    write_jsonl(&a.out, &run.outcomes)?;
    let saved = run.outcomes.iter().filter(|o| o.pdf_path.is_some()).count();
    println!("{saved}/{} saved, {} calls", run.outcomes.len(), run.calls.len());
    Ok(())
}

fn cmd_layout(cmd: LayoutCmd) -> Result<()> {
    let LayoutCmd::Fix { input, out, emit_masks, overrides } = cmd;
    let mut cfg = LayoutConfig::default();
    overrides.apply(&mut cfg);
    let page: PageLayout = load(&input, "page cluster file")?;
    let fixed = fix_page(&page, &cfg).map_err(|e| match e {
        hysem_core::layout::LayoutError::Pattern(_) => config_err(e.to_string()),
        other => other.into(),
    })?;
    write_json(&out, &fixed.layout)?;
    if let Some(m) = emit_masks {
        write_json(&m, &fixed.masks)?;
    }
    println!("{} clusters, {} masks", fixed.layout.clusters.len(), fixed.masks.len());
    Ok(())
}

fn cmd_chunk(a: ChunkArgs) -> Result<()> {
    let spec = ChunkSpec::new(a.max_tokens, a.overlap).map_err(|e| config_err(e.to_string()))?;
    let records = load_records(&a.input)?;
    let mut chunks: Vec<Chunk> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        chunks.extend(chunk_document(i, &hysem_core::index::document_content(r), spec, &WhitespaceTokenizer)?);
    }
    write_jsonl(&a.out, &chunks)?;
    println!("{} chunks from {} records", chunks.len(), records.len());
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    if !a.fields.exists() {
        return Err(config_err(format!("field spec file {} does not exist", a.fields.display())));
    }
    let specs = parse_field_specs(&std::fs::read_to_string(&a.fields)?).map_err(|e| config_err(format!("field specs: {e}")))?;
    let extractor_cfg: ExtractorConfig = load(&a.extractor, "extractor file")?;
    let extractor: Box<dyn hysem_core::extraction::Extractor> = match extractor_cfg {
        ExtractorConfig::Scripted(s) => Box::new(s),
        ExtractorConfig::Keyword { fields } => {
            let dicts_path = a.dicts.as_ref().ok_or_else(|| config_err("a keyword extractor needs --dicts"))?;
            let dicts: DictionaryConfig = load(dicts_path, "dictionary file")?;
            Box::new(hysem_core::extraction::keyword_extractor_from_dictionaries(&fields, &dicts))
        }
    };
    let spec = ChunkSpec::new(a.max_tokens, a.overlap).map_err(|e| config_err(e.to_string()))?;
    let mut records = load_records(&a.input)?;
    let cache = match &a.cache {
        Some(p) => ExtractionCache::load(p)?,
        None => ExtractionCache::new(),
    };
    let outcomes = extract_records(&mut records, &specs, extractor.as_ref(), &cache, &WhitespaceTokenizer, spec, a.parallel)?;
    if let Some(p) = &a.cache {
        cache.save(p)?;
    }
    write_jsonl(a.out.as_ref().unwrap_or(&a.input), &records)?;
    let failures: usize = outcomes.iter().map(|o| o.failures.len()).sum();
    println!("{} documents, {failures} chunk failures", records.len());
    Ok(())
}

fn cmd_topics(cmd: TopicsCmd) -> Result<()> {
    let TopicsCmd::Train { input, grid, out, annotated } = cmd;
    let grid: GridSpec = load(&grid, "grid file")?;
    if grid.num_topics.is_empty() {
        return Err(config_err("grid must list at least one num_topics value"));
    }
    let mut records = load_records(&input)?;
    let cfg = TopicsStageConfig { grid, ..Default::default() };
    let artifact = pipeline::train_topics(&mut records, &cfg)?;
    write_json(&out, &artifact)?;
    if let Some(p) = annotated {
        write_jsonl(&p, &records)?;
    }
    println!("{} topics, mean coherence {:.4}", artifact.model.num_topics(), artifact.mean_coherence);
    Ok(())
}

fn cmd_unify(a: UnifyArgs) -> Result<()> {
    let dicts: DictionaryConfig = load(&a.dicts, "dictionary file")?;
    if !dicts.contains_key(&a.key) {
        return Err(config_err(format!("unknown dictionary key {}", a.key)));
    }
    let provider = EmbeddingConfig::Hash { dimension: a.dim }.build();
    let (unifier, _) = Unifier::build(&dicts, &provider, UnifyConfig { threshold: a.threshold });
    let detail =
        hysem_core::unify::unify_term_detailed(&a.term, &a.key, &unifier.indices, &provider, unifier.cfg)?;
    print_json(&detail)
}

fn cmd_graph(cmd: GraphCmd) -> Result<()> {
    match cmd {
        GraphCmd::Build { input, mappings, dicts, dim, out } => {
            let records = load_records(&input)?;
            let mappings: FieldMappings = match mappings {
                Some(p) => load(&p, "mapping file")?,
                None => FieldMappings::cardio_ozone(),
            };
            mappings.validate().map_err(|e| config_err(e.to_string()))?;
            let dicts: DictionaryConfig = match dicts {
                Some(p) => load(&p, "dictionary file")?,
                None => DictionaryConfig::new(),
            };
            let provider = EmbeddingConfig::Hash { dimension: dim }.build();
            let (unifier, _) = Unifier::build(&dicts, &provider, UnifyConfig::default());
            let u: Option<&dyn TermUnifier> = if dicts.is_empty() { None } else { Some(&unifier) };
            let mut g = Graph::new();
            for r in records.iter().filter(|r| !r.doi.trim().is_empty()) {
                upsert_article(&mut g, r)?;
                apply_field_mappings(&mut g, r, &mappings, u)?;
            }
            g.save(&out)?;
            println!("{} nodes, {} edges", g.node_count(), g.edge_count());
        }
        GraphCmd::Query(GraphQuery::Methods { input, query }) => {
            if !input.exists() {
                return Err(config_err(format!("graph file {} does not exist", input.display())));
            }
            let g = Graph::load(&input)?;
            let q: MethodQuery = match query {
                Some(p) => load(&p, "query file")?,
                None => MethodQuery::default(),
            };
            print_json(&query_method_distribution(&g, &q))?;
        }
    }
    Ok(())
}

fn cmd_index(cmd: IndexCmd) -> Result<()> {
    match cmd {
        IndexCmd::Build { chunks, provider, dim, name, out_dir, records } => {
            if provider != "test" && provider != "hash" {
                return Err(config_err(format!("unknown embedding provider {provider}")));
            }
            if !chunks.exists() {
                return Err(config_err(format!("chunk file {} does not exist", chunks.display())));
            }
            let chunks: Vec<Chunk> = read_jsonl(&chunks)?;
            let records = match records {
                Some(p) => load_records(&p)?,
                None => Vec::new(),
            };
            let embed = EmbeddingConfig::Hash { dimension: dim }.build();
            let coll = Collection::new(&name, embed.dimension())?;
            let cfg = IndexConfig::default();
            for batch in chunks.chunks(cfg.embed_batch_size) {
                let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
                let vectors = embed.embed_batch(&texts)?;
                let mut points = Vec::with_capacity(batch.len());
                for (c, vector) in batch.iter().zip(vectors) {
                    let mut payload = serde_json::Map::new();
                    payload.insert("doc_idx".into(), c.doc_idx.into());
                    payload.insert("chunk_idx".into(), c.chunk_idx.into());
                    if let Some(r) = records.get(c.doc_idx) {
                        payload.insert("doi".into(), r.doi.clone().into());
                        payload.insert("title".into(), r.title.clone().into());
                    }
                    payload.insert("content".into(), c.text.clone().into());
                    let id = deterministic_point_id(c.doc_idx as u64, c.chunk_idx as u64)?;
                    points.push(VectorPoint { id, vector, payload });
                }
                coll.upsert_batch(points)?;
            }
            let path = out_dir.join(format!("{name}.jsonl"));
            std::fs::create_dir_all(&out_dir)?;
            coll.save_jsonl(&path)?;
            println!("{} points -> {}", coll.len(), path.display());
        }
        IndexCmd::Query { text, k, fuse, collections, dim, graph } => {
            let embed = EmbeddingConfig::Hash { dimension: dim }.build();
            let mut colls = Vec::new();
            for p in &collections {
                if !p.exists() {
                    return Err(config_err(format!("collection file {} does not exist", p.display())));
                }
                let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("collection").to_string();
                colls.push(Collection::load_jsonl(name, dim, p)?);
            }
            if fuse {
                let g = graph.map(|p| Graph::load(&p)).transpose()?;
                let keywords: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
                let retriever = HybridRetriever {
                    collections: colls.iter().collect(),
                    graph: g.as_ref(),
                    provider: &embed,
                    fusion: FusionConfig::default(),
                };
                print_json(&retriever.retrieve(&text, &keywords, &[], k)?.fused)?;
            } else {
                let q = embed.embed(&text)?;
                let mut hits = Vec::new();
                for c in &colls {
                    let r = semantic_search(c, &q, k)?;
                    for (id, score) in r.entries.into_iter().zip(r.scores) {
                        hits.push(serde_json::json!({"collection": c.name(), "id": id, "score": score}));
                    }
                }
                hits.sort_by(|a, b| b["score"].as_f64().unwrap_or(0.0).total_cmp(&a["score"].as_f64().unwrap_or(0.0)));
                hits.truncate(k);
                print_json(&hits)?;
            }
        }
    }
    Ok(())
}

fn load_pipeline_config(path: &Path) -> Result<PipelineConfig> {
    PipelineConfig::load(path).map_err(|e| config_err(e.to_string()))
}

fn cmd_ask(a: AskArgs) -> Result<()> {
    let mut cfg = load_pipeline_config(&a.config)?;
    if let Some(kb) = a.kb {
        cfg.kb_prefix = kb;
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
    }
    let agents: AgentsConfig = match a.agents.or(cfg.ask.agents.clone()) {
        Some(p) => load(&p, "agents file")?,
        None => AgentsConfig::default(),
    };
    let summary: AskSummary = pipeline::ask(&cfg, &a.query, &agents)?;
    print_json(&summary)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnswerInput {
    Answer(Answer),
    Observations(Vec<Observation>),
    Final { answer: Answer },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RetrievedInput {
    Session { context: Vec<ContextItem> },
    Chunks(Vec<RetrievedChunk>),
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    let observations = match load::<AnswerInput>(&a.answers, "answers file")? {
        AnswerInput::Answer(ans) | AnswerInput::Final { answer: ans } => ans.observations,
        AnswerInput::Observations(o) => o,
    };
    let canonical = CanonicalTable::new(&load_records(&a.canonical)?);
    let retrieved = match load::<RetrievedInput>(&a.retrieved, "retrieval file")? {
        RetrievedInput::Session { context } => context.iter().map(ContextItem::as_retrieved).collect(),
        RetrievedInput::Chunks(c) => c,
    };
    let reports: Vec<_> = observations.iter().map(|o| verify_observation(o, &canonical, &retrieved)).collect();
    write_json(&a.out, &reports)?;
    for (i, r) in reports.iter().enumerate() {
        println!("observation {i}: {:?} ({:.3})", r.verdict.label, r.similarity);
    }
    Ok(())
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let cfg = load_pipeline_config(&a.config)?;
    let stages = if a.stages.is_empty() {
        Stage::ALL.to_vec()
    } else {
        a.stages
            .iter()
            .map(|s| Stage::parse(s).ok_or_else(|| config_err(format!("unknown stage {s}"))))
            .collect::<Result<Vec<_>>>()?
    };
    pipeline::run_pipeline(&cfg, &stages)?;
    println!("completed: {}", stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(", "));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Records(c) => cmd_records(c),
        Command::Fetch(a) => cmd_fetch(a),
        Command::Layout(c) => cmd_layout(c),
        Command::Chunk(a) => cmd_chunk(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Topics(c) => cmd_topics(c),
        Command::Unify(a) => cmd_unify(a),
        Command::Graph(c) => cmd_graph(c),
        Command::Index(c) => cmd_index(c),
        Command::Ask(a) => cmd_ask(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_config = e.downcast_ref::<ConfigError>().is_some()
                || e.downcast_ref::<PipelineError>().is_some_and(PipelineError::is_config);
            ExitCode::from(if is_config { 2 } else { 1 })
        }
    }
}
