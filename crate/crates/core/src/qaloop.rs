//! Bounded generate/evaluate loop with schema gating, session logging and
//! preference-triplet emission. Agents are pluggable.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{info, warn};

use crate::graph::{graph_search, FieldMappings, Graph, NodeRef, ARTICLE};
use crate::index::{RetrievalTrace, MAX_CHUNKS_PER_DOC};
use crate::records::{normalize_key, write_jsonl, MetadataRecord, RecordsError};
use crate::topics::{DefaultNormalizer, TextNormalizer};
use crate::unify::TermUnifier;
use crate::verify::{
    validate_schema, verify_observation, CanonicalTable, Observation, RetrievedChunk, SourceKind, VerificationReport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("generator failed: {0}")]
    Generator(String),
    #[error("evaluator failed: {0}")]
    Evaluator(String),
    #[error("reformulator failed: {0}")]
    Reformulator(String),
}

#[derive(Debug, Error)]
pub enum QaError {
    #[error("max_iterations must be at least 1")]
    ZeroIterations,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Records(#[from] RecordsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    #[serde(default)]
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalVerdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub verdict: EvalVerdict,
    #[serde(default)]
    pub feedback: String,
}

/// One retrieved unit offered to the generator, with its citation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextItem {
    pub source: SourceKind,
    pub doc_idx: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_idx: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
    pub doi: String,
    pub title: String,
    pub zotero_key: String,
    pub in_text_citation: String,
    pub full_citation: String,
    pub content: String,
}

impl ContextItem {
    pub fn as_retrieved(&self) -> RetrievedChunk {
        RetrievedChunk {
            source: self.source,
            doc_idx: self.doc_idx,
            chunk_idx: self.chunk_idx,
            doi: self.doi.clone(),
            content: self.content.clone(),
        }
    }

    /// An observation citing this item verbatim.
    pub fn cite(&self) -> Observation {
        let mut o = Observation::new(self.source);
        let (doc, chunk) = (self.doc_idx.to_string(), self.chunk_idx.unwrap_or(0).to_string());
        match self.source {
            SourceKind::Pdf => {
                o.pdf_doc_index = doc;
                o.pdf_chunk_index = chunk;
            }
            SourceKind::Structured => {
                o.struct_doc_index = doc;
                o.struct_chunk_index = chunk;
            }
            SourceKind::Kg => {
                o.kg_doc_index = doc;
                o.relation = self.relation.clone();
            }
        }
        o.doi = self.doi.clone();
        o.zotero_key = self.zotero_key.clone();
        o.in_text_citation = self.in_text_citation.clone();
        o.full_citation = self.full_citation.clone();
        o.evidence_text = self.content.clone();
        o
    }
}

pub trait Generator: Send + Sync {
    fn generate(&self, query: &str, context: &[ContextItem], feedback: Option<&str>) -> Result<Answer, AgentError>;
}

pub trait Evaluator: Send + Sync {
    fn evaluate(&self, answer: &Answer, context: &[ContextItem]) -> Result<Evaluation, AgentError>;
}

/// Quotes the top context items, one observation each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractiveGenerator {
    pub max_observations: usize,
}

impl Default for ExtractiveGenerator {
    fn default() -> Self {
        Self { max_observations: 3 }
    }
}

impl Generator for ExtractiveGenerator {
    fn generate(&self, query: &str, context: &[ContextItem], _feedback: Option<&str>) -> Result<Answer, AgentError> {
        let picked: Vec<&ContextItem> = context
            .iter()
            .filter(|c| !c.zotero_key.is_empty() && !c.in_text_citation.is_empty() && !c.full_citation.is_empty())
            .take(self.max_observations)
            .collect();
        let mut text = format!("Evidence for: {query}");
        for c in &picked {
            text.push_str(&format!("\n- {} {}", c.title, c.in_text_citation));
        }
        Ok(Answer { text, observations: picked.into_iter().map(ContextItem::cite).collect() })
    }
}

/// Passes answers whose observations all cite an item of the context.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationEvaluator;

impl Evaluator for CitationEvaluator {
    fn evaluate(&self, answer: &Answer, context: &[ContextItem]) -> Result<Evaluation, AgentError> {
        if answer.observations.is_empty() {
            return Ok(Evaluation { verdict: EvalVerdict::Fail, feedback: "answer cites no evidence".into() });
        }
        let retrieved: Vec<RetrievedChunk> = context.iter().map(ContextItem::as_retrieved).collect();
        let uncited: Vec<usize> = answer
            .observations
            .iter()
            .enumerate()
            .filter(|(_, o)| !crate::verify::verify_indices(o, &retrieved))
            .map(|(i, _)| i)
            .collect();
        if uncited.is_empty() {
            Ok(Evaluation { verdict: EvalVerdict::Pass, feedback: String::new() })
        } else {
            Ok(Evaluation {
                verdict: EvalVerdict::Fail,
                feedback: format!("observations {uncited:?} cite chunks outside the retrieved context"),
            })
        }
    }
}

/// Replays a fixed sequence; the last entry repeats once the script runs out.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ScriptedGenerator {
    pub answers: Vec<Answer>,
    /// 1-based iteration at which generation fails.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_at: Option<usize>,
    #[serde(skip)]
    calls: std::sync::atomic::AtomicUsize,
}

impl ScriptedGenerator {
    pub fn new(answers: Vec<Answer>) -> Self {
        Self { answers, fail_at: None, calls: Default::default() }
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, _query: &str, _context: &[ContextItem], _feedback: Option<&str>) -> Result<Answer, AgentError> {
        let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        if self.fail_at == Some(n + 1) {
            return Err(AgentError::Generator(format!("scripted failure at iteration {}", n + 1)));
        }
        self.answers
            .get(n.min(self.answers.len().saturating_sub(1)))
            .cloned()
            .ok_or_else(|| AgentError::Generator("script has no answers".into()))
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ScriptedEvaluator {
    pub verdicts: Vec<Evaluation>,
    #[serde(skip)]
    calls: std::sync::atomic::AtomicUsize,
}

impl ScriptedEvaluator {
    pub fn new(verdicts: Vec<Evaluation>) -> Self {
        Self { verdicts, calls: Default::default() }
    }
}

impl Evaluator for ScriptedEvaluator {
    fn evaluate(&self, _answer: &Answer, _context: &[ContextItem]) -> Result<Evaluation, AgentError> {
        let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.verdicts
            .get(n.min(self.verdicts.len().saturating_sub(1)))
            .cloned()
            .ok_or_else(|| AgentError::Evaluator("script has no verdicts".into()))
    }
}

impl Clone for ScriptedGenerator {
    fn clone(&self) -> Self {
        Self { answers: self.answers.clone(), fail_at: self.fail_at, calls: Default::default() }
    }
}

/// Agent configuration as read from an agents file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentsConfig {
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub evaluator: EvaluatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    Extractive {
        #[serde(default = "default_max_obs")]
        max_observations: usize,
    },
    Scripted {
        answers: Vec<Answer>,
        #[serde(default)]
        fail_at: Option<usize>,
    },
}

fn default_max_obs() -> usize {
    3
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::Extractive { max_observations: default_max_obs() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorConfig {
    #[default]
    CitationCheck,
    Scripted { verdicts: Vec<Evaluation> },
}

impl AgentsConfig {
    pub fn build(&self) -> (Box<dyn Generator>, Box<dyn Evaluator>) {
        let g: Box<dyn Generator> = match &self.generator {
            GeneratorConfig::Extractive { max_observations } => {
                Box::new(ExtractiveGenerator { max_observations: *max_observations })
            }
            GeneratorConfig::Scripted { answers, fail_at } => {
                let mut s = ScriptedGenerator::new(answers.clone());
                s.fail_at = *fail_at;
                Box::new(s)
            }
        };
        let e: Box<dyn Evaluator> = match &self.evaluator {
            EvaluatorConfig::CitationCheck => Box::new(CitationEvaluator),
            EvaluatorConfig::Scripted { verdicts } => Box::new(ScriptedEvaluator::new(verdicts.clone())),
        };
        (g, e)
    }
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self { generator: GeneratorConfig::default(), evaluator: EvaluatorConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reformulation {
    pub query: String,
    pub keywords: Vec<String>,
}

pub trait Reformulator: Send + Sync {
    fn reformulate(&self, query: &str) -> Result<Reformulation, AgentError>;
}

/// Keeps the query and takes its first distinct content words as keywords.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeywordReformulator;

impl Reformulator for KeywordReformulator {
    fn reformulate(&self, query: &str) -> Result<Reformulation, AgentError> {
        let mut seen = HashSet::new();
        let keywords = DefaultNormalizer
            .normalize(query)
            .into_iter()
            .filter(|t| t.chars().count() > 2 && seen.insert(t.clone()))
            .take(MAX_KEYWORDS)
            .collect();
        Ok(Reformulation { query: query.split_whitespace().collect::<Vec<_>>().join(" "), keywords })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedReformulator {
    pub output: Option<Reformulation>,
}

impl Reformulator for ScriptedReformulator {
    fn reformulate(&self, _query: &str) -> Result<Reformulation, AgentError> {
        self.output.clone().ok_or_else(|| AgentError::Reformulator("no scripted reformulation".into()))
    }
}

pub const MAX_KEYWORDS: usize = 5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Enhancement {
    pub enhanced_query: String,
    pub keywords: Vec<String>,
    pub entities: Vec<NodeRef>,
    /// Articles linked to the entities, with the number of entities matched.
    pub graph_context: Vec<(String, usize)>,
}

fn word_ngrams(query: &str, max_n: usize) -> Vec<String> {
    let words: Vec<String> = query
        .to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '.'))
        .map(|w| w.trim_matches('.').to_string())
        .filter(|w| !w.is_empty())
        .collect();
    let mut out = Vec::new();
    for n in (1..=max_n).rev() {
        for w in words.windows(n) {
            out.push(w.join(" "));
        }
    }
    out
}

/// Reformulates the query, maps its phrases to graph entities through the
/// unification dictionaries, and collects the articles linked to them.
pub fn enhance_query(
    query: &str,
    reformulator: &dyn Reformulator,
    unifier: Option<&dyn TermUnifier>,
    mappings: &FieldMappings,
    graph: Option<&Graph>,
) -> Enhancement {
    let (enhanced_query, keywords) = match reformulator.reformulate(query) {
        Ok(r) => {
            let mut kw = r.keywords;
            kw.truncate(MAX_KEYWORDS);
            (r.query, kw)
        }
        Err(e) => {
            warn!(error = %e, "query reformulation failed, using the original query");
            (query.to_string(), Vec::new())
        }
    };
    let mut entities: Vec<NodeRef> = Vec::new();
    if let Some(u) = unifier {
        let grams = word_ngrams(query, 3);
        for mapping in mappings.0.values() {
            let Some(dict) = &mapping.dictionary else { continue };
            for g in &grams {
                match u.unify(g, dict) {
                    Ok(Some(canon)) => {
                        let r = NodeRef::new(&mapping.label, canon);
                        if !entities.contains(&r) {
                            entities.push(r);
                        }
                    }
                    Ok(None) => {}
                    Err(e) => {
                        warn!(dictionary = %dict, error = %e, "entity unification failed");
                        break;
                    }
                }
            }
        }
    }
    let graph_context = graph.map(|g| graph_search(g, &entities)).unwrap_or_default();
    Enhancement { enhanced_query, keywords, entities, graph_context }
}

fn source_of_collection(name: &str) -> Option<SourceKind> {
    if name.ends_with("_pdf_chunks") {
        Some(SourceKind::Pdf)
    } else if name.ends_with("_structured") {
        Some(SourceKind::Structured)
    } else {
        None
    }
}

/// Turns fused retrieval hits and graph matches into citable context items.
pub fn build_context(
    trace: &RetrievalTrace,
    records: &[MetadataRecord],
    graph: Option<&Graph>,
    enhancement: &Enhancement,
    max_graph_items: usize,
) -> Vec<ContextItem> {
    let doc_of = |doi: &str| records.iter().position(|r| normalize_key(&r.doi) == normalize_key(doi));
    let item = |source, doc_idx: usize, chunk_idx, relation, content: String| {
        let r = &records[doc_idx];
        ContextItem {
            source,
            doc_idx: doc_idx as u64,
            chunk_idx,
            relation,
            doi: r.doi.clone(),
            title: r.title.clone(),
            zotero_key: r.zotero_key.clone(),
            in_text_citation: r.in_text_citation.clone(),
            full_citation: r.full_citation.clone(),
            content,
        }
    };
    let mut out = Vec::new();
    for hit in &trace.fused {
        let Some(source) = source_of_collection(&hit.key.collection) else { continue };
        let doc_idx = (hit.key.point_id / MAX_CHUNKS_PER_DOC) as usize;
        if doc_idx >= records.len() {
            continue;
        }
        let chunk_idx = hit.key.point_id % MAX_CHUNKS_PER_DOC;
        out.push(item(source, doc_idx, Some(chunk_idx), None, hit.content.clone()));
    }
    if let Some(g) = graph {
        for (doi, _) in enhancement.graph_context.iter().take(max_graph_items) {
            let Some(doc_idx) = doc_of(doi) else { continue };
            let article = NodeRef::new(ARTICLE, doi.as_str());
            let links: Vec<(String, String)> = g
                .edges()
                .filter(|e| e.from == article && enhancement.entities.contains(&e.to))
                .map(|e| (e.kind.clone(), e.to.key.clone()))
                .collect();
            if links.is_empty() {
                continue;
            }
            let relation = links.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join(", ");
            let content = links.iter().map(|(k, t)| format!("{k} {t}")).collect::<Vec<_>>().join("; ");
            out.push(item(SourceKind::Kg, doc_idx, None, Some(relation), content));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub max_iterations: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self { max_iterations: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub answer: Answer,
    pub schema_violations: Vec<String>,
    pub evaluation: Evaluation,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriplet {
    pub prompt: String,
    pub rejected: Answer,
    pub chosen: Answer,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub kb_name: String,
    pub session_id: String,
    pub query: String,
    pub enhanced_query: String,
    pub keywords: Vec<String>,
    pub entities: Vec<NodeRef>,
    pub retrieval: Option<RetrievalTrace>,
    pub context: Vec<ContextItem>,
    pub iterations: Vec<IterationRecord>,
    pub final_answer: Option<Answer>,
    pub validated: bool,
    pub triplets: Vec<PreferenceTriplet>,
    pub verification: Vec<VerificationReport>,
    pub aborted: Option<String>,
}

pub fn session_id(kb: &str, query: &str) -> String {
    let mut h = Sha256::new();
    h.update(kb.as_bytes());
    h.update([0]);
    h.update(query.as_bytes());
    hex::encode(&h.finalize()[..8])
}

impl SessionLog {
    pub fn new(kb: &str, query: &str) -> Self {
        Self {
            kb_name: kb.to_string(),
            session_id: session_id(kb, query),
            query: query.to_string(),
            enhanced_query: query.to_string(),
            ..Default::default()
        }
    }

    pub fn with_enhancement(mut self, e: &Enhancement) -> Self {
        self.enhanced_query = e.enhanced_query.clone();
        self.keywords = e.keywords.clone();
        self.entities = e.entities.clone();
        self
    }

    pub fn dir(&self, root: &Path) -> PathBuf {
        root.join(&self.kb_name).join(&self.session_id)
    }

    /// Writes the session folder and returns its path.
    pub fn persist(&self, root: &Path) -> Result<PathBuf, QaError> {
        let dir = self.dir(root);
        std::fs::create_dir_all(&dir)?;
        let write = |name: &str, v: &serde_json::Value| -> Result<(), QaError> {
            std::fs::write(dir.join(name), serde_json::to_string_pretty(v)?)?;
            Ok(())
        };
        write(
            "query.json",
            &serde_json::json!({
                "kb_name": self.kb_name,
                "session_id": self.session_id,
                "query": self.query,
                "enhanced_query": self.enhanced_query,
                "keywords": self.keywords,
                "entities": self.entities,
            }),
        )?;
        write("retrieval.json", &serde_json::json!({ "trace": self.retrieval, "context": self.context }))?;
        for it in &self.iterations {
            write(&format!("iteration-{}.json", it.iteration), &serde_json::to_value(it)?)?;
        }
        write(
            "final.json",
            &serde_json::json!({
                "answer": self.final_answer,
                "validated": self.validated,
                "aborted": self.aborted,
            }),
        )?;
        write_jsonl(&dir.join("triplets.jsonl"), &self.triplets)?;
        write("verification.json", &serde_json::to_value(&self.verification)?)?;
        Ok(dir)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub final_answer: Answer,
    pub validated: bool,
    pub log: SessionLog,
}

/// An agent failed; the log holds everything recorded up to that point.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopAbort {
    pub error: AgentError,
    pub log: SessionLog,
}

/// Runs up to `cfg.max_iterations` generate/evaluate rounds. An iteration is
/// accepted only if the evaluator passes it and every observation satisfies
/// the schema. The final answer is verified against `canonical` either way.
pub fn run_loop(
    mut log: SessionLog,
    generator: &dyn Generator,
    evaluator: &dyn Evaluator,
    cfg: LoopConfig,
    canonical: &CanonicalTable,
) -> Result<Result<LoopOutcome, LoopAbort>, QaError> {
    if cfg.max_iterations == 0 {
        return Err(QaError::ZeroIterations);
    }
    let query = log.enhanced_query.clone();
    let mut feedback: Option<String> = None;
    let mut accepted: Option<usize> = None;
    for iteration in 1..=cfg.max_iterations {
        let answer = match generator.generate(&query, &log.context, feedback.as_deref()) {
            Ok(a) => a,
            Err(error) => {
                log.aborted = Some(error.to_string());
                return Ok(Err(LoopAbort { error, log }));
            }
        };
        let violations: Vec<String> = answer
            .observations
            .iter()
            .enumerate()
            .flat_map(|(i, o)| validate_schema(o).into_iter().map(move |v| format!("observation {i}: {v}")))
            .collect();
        let evaluation = match evaluator.evaluate(&answer, &log.context) {
            Ok(e) => e,
            Err(error) => {
                log.aborted = Some(error.to_string());
                return Ok(Err(LoopAbort { error, log }));
            }
        };
        let passed = evaluation.verdict == EvalVerdict::Pass && violations.is_empty();
        feedback = (!passed).then(|| {
            let mut f = evaluation.feedback.clone();
            if !violations.is_empty() {
                if !f.is_empty() {
                    f.push_str("; ");
                }
                f.push_str(&violations.join("; "));
            }
            f
        });
        log.iterations.push(IterationRecord { iteration, answer, schema_violations: violations, evaluation, accepted: passed });
        if passed {
            accepted = Some(iteration - 1);
            break;
        }
    }
    let last = log.iterations.len() - 1;
    let final_idx = accepted.unwrap_or(last);
    let final_answer = log.iterations[final_idx].answer.clone();
    if let Some(a) = accepted {
        for rejected in &log.iterations[..a] {
            if rejected.answer == final_answer {
                warn!(iteration = rejected.iteration, "rejected answer identical to the accepted one, no triplet");
                continue;
            }
            log.triplets.push(PreferenceTriplet {
                prompt: log.query.clone(),
                rejected: rejected.answer.clone(),
                chosen: final_answer.clone(),
            });
        }
    } else {
        warn!(iterations = log.iterations.len(), "no answer passed evaluation; returning the last one unvalidated");
    }
    let retrieved: Vec<RetrievedChunk> = log.context.iter().map(ContextItem::as_retrieved).collect();
    log.verification =
        final_answer.observations.iter().map(|o| verify_observation(o, canonical, &retrieved)).collect();
    log.validated = accepted.is_some();
    log.final_answer = Some(final_answer.clone());
    info!(iterations = log.iterations.len(), validated = log.validated, triplets = log.triplets.len(), "qa loop done");
    Ok(Ok(LoopOutcome { final_answer, validated: log.validated, log }))
}
