//! Post-hoc checks of cited observations: schema, metadata against the
//! canonical records, cited indices against the retrieved chunks, and
//! evidence similarity.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{normalize_key, MetadataRecord};

pub const NOT_APPLICABLE: &str = "N/A";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("similarity score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceKind {
    #[serde(rename = "PDF", alias = "pdf")]
    Pdf,
    #[serde(alias = "structured", alias = "Struct")]
    Structured,
    #[serde(rename = "KG", alias = "kg")]
    Kg,
}

fn na() -> String {
    NOT_APPLICABLE.to_string()
}

/// One cited piece of evidence. Accepts both snake_case keys and the
/// CamelCase keys used in answer JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub source_kind: SourceKind,
    #[serde(default = "na", alias = "PDF_DocIndex")]
    pub pdf_doc_index: String,
    #[serde(default = "na", alias = "PDF_ChunkIndex")]
    pub pdf_chunk_index: String,
    #[serde(default = "na", alias = "Struct_DocIndex")]
    pub struct_doc_index: String,
    #[serde(default = "na", alias = "Struct_ChunkIndex")]
    pub struct_chunk_index: String,
    #[serde(default = "na", alias = "KG_DocIndex")]
    pub kg_doc_index: String,
    #[serde(default, alias = "Relation", skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
    #[serde(default, alias = "DOI")]
    pub doi: String,
    #[serde(default, alias = "ZoteroKey")]
    pub zotero_key: String,
    #[serde(default, alias = "InTextCitation")]
    pub in_text_citation: String,
    #[serde(default, alias = "FullCitation")]
    pub full_citation: String,
    #[serde(default, alias = "EvidenceText")]
    pub evidence_text: String,
}

impl Observation {
    /// An observation of `kind` with every index field set to "N/A".
    pub fn new(kind: SourceKind) -> Self {
        Self {
            source_kind: kind,
            pdf_doc_index: na(),
            pdf_chunk_index: na(),
            struct_doc_index: na(),
            struct_chunk_index: na(),
            kg_doc_index: na(),
            relation: None,
            doi: String::new(),
            zotero_key: String::new(),
            in_text_citation: String::new(),
            full_citation: String::new(),
            evidence_text: String::new(),
        }
    }

    fn family_fields(&self, kind: SourceKind) -> Vec<(&'static str, &str)> {
        match kind {
            SourceKind::Pdf => vec![("pdf_doc_index", &self.pdf_doc_index), ("pdf_chunk_index", &self.pdf_chunk_index)],
            SourceKind::Structured => {
                vec![("struct_doc_index", &self.struct_doc_index), ("struct_chunk_index", &self.struct_chunk_index)]
            }
            SourceKind::Kg => vec![("kg_doc_index", &self.kg_doc_index)],
        }
    }

    /// Source families with at least one index field set.
    pub fn populated_families(&self) -> Vec<SourceKind> {
        [SourceKind::Pdf, SourceKind::Structured, SourceKind::Kg]
            .into_iter()
            .filter(|&k| self.family_fields(k).iter().any(|(_, v)| is_set(v)))
            .collect()
    }

    /// Parsed (doc, chunk) indices of the declared source family.
    pub fn cited_indices(&self) -> Option<(u64, Option<u64>)> {
        let parse = |s: &str| if is_set(s) { s.trim().parse::<u64>().ok() } else { None };
        match self.source_kind {
            SourceKind::Pdf => Some((parse(&self.pdf_doc_index)?, Some(parse(&self.pdf_chunk_index)?))),
            SourceKind::Structured => Some((parse(&self.struct_doc_index)?, Some(parse(&self.struct_chunk_index)?))),
            SourceKind::Kg => Some((parse(&self.kg_doc_index)?, None)),
        }
    }
}

fn is_set(v: &str) -> bool {
    let v = v.trim();
    !v.is_empty() && !v.eq_ignore_ascii_case(NOT_APPLICABLE)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum SchemaViolation {
    NoSource,
    MixedSource(Vec<SourceKind>),
    KindMismatch { declared: SourceKind, populated: SourceKind },
    MissingField(String),
    RelationRequired,
    RelationNotAllowed,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaViolation::NoSource => write!(f, "no source indices populated"),
            SchemaViolation::MixedSource(kinds) => write!(f, "mixed-source observation: {kinds:?}"),
            SchemaViolation::KindMismatch { declared, populated } => {
                write!(f, "declared source {declared:?} but {populated:?} indices populated")
            }
            SchemaViolation::MissingField(name) => write!(f, "{name} required"),
            SchemaViolation::RelationRequired => write!(f, "relation required for KG sources"),
            SchemaViolation::RelationNotAllowed => write!(f, "relation only allowed for KG sources"),
        }
    }
}

/// All schema violations of `obs`; empty means valid.
pub fn validate_schema(obs: &Observation) -> Vec<SchemaViolation> {
    let mut out = Vec::new();
    let families = obs.populated_families();
    match families.as_slice() {
        [] => out.push(SchemaViolation::NoSource),
        [one] => {
            if *one != obs.source_kind {
                out.push(SchemaViolation::KindMismatch { declared: obs.source_kind, populated: *one });
            }
            for (name, v) in obs.family_fields(*one) {
                if !is_set(v) {
                    out.push(SchemaViolation::MissingField(name.to_string()));
                }
            }
        }
        many => out.push(SchemaViolation::MixedSource(many.to_vec())),
    }
    for (name, v) in [
        ("doi", &obs.doi),
        ("zotero_key", &obs.zotero_key),
        ("in_text_citation", &obs.in_text_citation),
        ("full_citation", &obs.full_citation),
    ] {
        if v.trim().is_empty() {
            out.push(SchemaViolation::MissingField(name.to_string()));
        }
    }
    let has_relation = obs.relation.as_deref().is_some_and(|r| !r.trim().is_empty());
    match (obs.source_kind, has_relation) {
        (SourceKind::Kg, false) => out.push(SchemaViolation::RelationRequired),
        (SourceKind::Pdf | SourceKind::Structured, true) => out.push(SchemaViolation::RelationNotAllowed),
        _ => {}
    }
    out
}

/// Canonical records looked up by normalized DOI; the first record wins.
#[derive(Debug, Clone, Default)]
pub struct CanonicalTable {
    by_doi: HashMap<String, MetadataRecord>,
}

impl CanonicalTable {
    pub fn new(records: &[MetadataRecord]) -> Self {
        let mut by_doi = HashMap::new();
        for r in records {
            let key = normalize_key(&r.doi);
            if !key.is_empty() {
                by_doi.entry(key).or_insert_with(|| r.clone());
            }
        }
        Self { by_doi }
    }

    pub fn get(&self, doi: &str) -> Option<&MetadataRecord> {
        self.by_doi.get(&normalize_key(doi))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataMatch {
    pub doi: bool,
    pub zotero_key: bool,
    pub in_text_citation: bool,
    pub full_citation: bool,
}

pub fn verify_metadata(obs: &Observation, canonical: &CanonicalTable) -> MetadataMatch {
    let Some(rec) = canonical.get(&obs.doi) else {
        return MetadataMatch::default();
    };
    let same = |a: &str, b: &str| a.trim() == b.trim();
    MetadataMatch {
        doi: true,
        zotero_key: same(&obs.zotero_key, &rec.zotero_key),
        in_text_citation: same(&obs.in_text_citation, &rec.in_text_citation),
        full_citation: same(&obs.full_citation, &rec.full_citation),
    }
}

/// A chunk that was placed in the answer context during a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub source: SourceKind,
    pub doc_idx: u64,
    /// Absent for graph sources, which cite whole articles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_idx: Option<u64>,
    pub doi: String,
    pub content: String,
}

/// The retrieved chunk the observation's indices point at, if any.
pub fn find_cited<'a>(obs: &Observation, retrieved: &'a [RetrievedChunk]) -> Option<&'a RetrievedChunk> {
    let (doc, chunk) = obs.cited_indices()?;
    retrieved.iter().find(|r| r.source == obs.source_kind && r.doc_idx == doc && r.chunk_idx == chunk)
}

pub fn verify_indices(obs: &Observation, retrieved: &[RetrievedChunk]) -> bool {
    find_cited(obs, retrieved).is_some()
}

/// Edit distance over Unicode scalar values. A diagonal band is widened
/// until it provably contains the optimal path, so the result equals the
/// full dynamic program.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return n.max(m);
    }
    let mut band = n.abs_diff(m).max(1);
    loop {
        if let Some(d) = banded(&a, &b, band) {
            return d;
        }
        band *= 2;
    }
}

// Distance if it is at most `band`, otherwise None.
fn banded(a: &[char], b: &[char], band: usize) -> Option<usize> {
    let (n, m) = (a.len(), b.len());
    let full = band >= n.max(m);
    const INF: usize = usize::MAX / 2;
    let mut prev = vec![INF; m + 1];
    let mut cur = vec![INF; m + 1];
    for (j, p) in prev.iter_mut().enumerate().take(band.min(m) + 1) {
        *p = j;
    }
    for i in 1..=n {
        let lo = i.saturating_sub(band).max(1);
        let hi = (i + band).min(m);
        cur.iter_mut().for_each(|c| *c = INF);
        if i <= band {
            cur[0] = i;
        }
        for j in lo..=hi {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            cur[j] = (prev[j - 1] + cost).min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[m];
    (full || d <= band).then_some(d)
}

/// `1 − levenshtein / max(len)`; two empty strings score 1.
pub fn content_similarity(evidence: &str, source: &str) -> f64 {
    let max = evidence.chars().count().max(source.chars().count());
    if max == 0 {
        return 1.0;
    }
    1.0 - levenshtein(evidence, source) as f64 / max as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Validity {
    Invalid,
    PossiblyValid,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Validity,
    pub score: f64,
}

pub const VALID_THRESHOLD: f64 = 0.8;
pub const POSSIBLY_VALID_THRESHOLD: f64 = 0.5;

pub fn classify(score: f64) -> Result<Verdict, VerifyError> {
    if !(0.0..=1.0).contains(&score) {
        return Err(VerifyError::ScoreOutOfRange(score));
    }
    let label = if score >= VALID_THRESHOLD {
        Validity::Valid
    } else if score >= POSSIBLY_VALID_THRESHOLD {
        Validity::PossiblyValid
    } else {
        Validity::Invalid
    };
    Ok(Verdict { label, score })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_ok: bool,
    pub violations: Vec<String>,
    pub doi_match: bool,
    pub zotero_match: bool,
    pub in_text_match: bool,
    pub full_citation_match: bool,
    pub index_ok: bool,
    pub similarity: f64,
    pub verdict: Verdict,
}

/// Runs every check on one observation. Evidence is compared with the
/// content of the chunk its indices cite; an uncited chunk scores 0.
pub fn verify_observation(
    obs: &Observation,
    canonical: &CanonicalTable,
    retrieved: &[RetrievedChunk],
) -> VerificationReport {
    let violations: Vec<String> = validate_schema(obs).iter().map(ToString::to_string).collect();
    let meta = verify_metadata(obs, canonical);
    let cited = find_cited(obs, retrieved);
    let similarity = cited.map_or(0.0, |c| content_similarity(&obs.evidence_text, &c.content));
    VerificationReport {
        schema_ok: violations.is_empty(),
        violations,
        doi_match: meta.doi,
        zotero_match: meta.zotero_key,
        in_text_match: meta.in_text_citation,
        full_citation_match: meta.full_citation,
        index_ok: cited.is_some(),
        similarity,
        verdict: classify(similarity).expect("similarity lies in [0, 1]"),
    }
}
