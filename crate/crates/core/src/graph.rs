//! In-process property graph with merge semantics, declarative field
//! mappings and typed analytical queries.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use indexmap::{IndexMap, IndexSet};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use tracing::{debug, warn};

use crate::records::MetadataRecord;
use crate::unify::TermUnifier;

pub const ARTICLE: &str = "Article";
pub const STUDY_TYPE: &str = "STUDY_TYPE";
pub const USES_ML_METHOD: &str = "USES_ML_METHOD";
pub const ASSOCIATED_WITH_HEART_DISEASE: &str = "ASSOCIATED_WITH_HEART_DISEASE";
pub const RELATED_TO_POLLUTANT: &str = "RELATED_TO_POLLUTANT";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("article has no DOI")]
    MissingDoi,
    #[error("article node {0} does not exist")]
    MissingArticle(String),
    #[error("invalid mapping for field `{field}`: {reason}")]
    InvalidMapping { field: String, reason: String },
    #[error("edge references missing node {label}:{key}")]
    DanglingEdge { label: String, key: String },
    #[error("duplicate node {label}:{key} in snapshot")]
    DuplicateNode { label: String, key: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub label: String,
    pub key: String,
}

impl NodeRef {
    pub fn new(label: impl Into<String>, key: impl Into<String>) -> Self {
        Self { label: label.into(), key: key.into() }
    }

    pub fn article(doi: &str) -> Self {
        Self::new(ARTICLE, doi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub label: String,
    pub key: String,
    pub properties: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeRef,
    #[serde(rename = "type")]
    pub kind: String,
    pub to: NodeRef,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

/// Nodes keyed by (label, key) and edges as a set of triples, both kept in
/// insertion order. Wrap in a lock to share between a writer and readers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    nodes: IndexMap<NodeRef, Map<String, Value>>,
    edges: IndexSet<Edge>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, r: &NodeRef) -> Option<&Map<String, Value>> {
        self.nodes.get(r)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeRef, &Map<String, Value>)> {
        self.nodes.iter()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter()
    }

    pub fn contains_edge(&self, e: &Edge) -> bool {
        self.edges.contains(e)
    }

    /// Creates the node if absent and overwrites the given properties.
    pub fn merge_node(&mut self, r: NodeRef, props: impl IntoIterator<Item = (String, Value)>) -> NodeRef {
        let entry = self.nodes.entry(r.clone()).or_default();
        for (k, v) in props {
            entry.insert(k, v);
        }
        r
    }

    /// Returns true when the edge is new.
    pub fn merge_edge(&mut self, from: NodeRef, kind: &str, to: NodeRef) -> Result<bool, GraphError> {
        for n in [&from, &to] {
            if !self.nodes.contains_key(n) {
                return Err(GraphError::DanglingEdge { label: n.label.clone(), key: n.key.clone() });
            }
        }
        Ok(self.edges.insert(Edge { from, kind: kind.to_string(), to }))
    }

    /// Targets of `from`'s outgoing edges of type `kind`.
    pub fn neighbors<'a>(&'a self, from: &'a NodeRef, kind: &'a str) -> impl Iterator<Item = &'a NodeRef> + 'a {
        self.edges.iter().filter(move |e| &e.from == from && e.kind == kind).map(|e| &e.to)
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            nodes: self
                .nodes
                .iter()
                .map(|(r, p)| Node { label: r.label.clone(), key: r.key.clone(), properties: p.clone() })
                .collect(),
            edges: self.edges.iter().cloned().collect(),
        }
    }

    pub fn from_snapshot(snap: GraphSnapshot) -> Result<Self, GraphError> {
        let mut g = Graph::new();
        for n in snap.nodes {
            let r = NodeRef::new(n.label, n.key);
            if g.nodes.contains_key(&r) {
                return Err(GraphError::DuplicateNode { label: r.label, key: r.key });
            }
            g.nodes.insert(r, n.properties);
        }
        for e in snap.edges {
            g.merge_edge(e.from, &e.kind, e.to)?;
        }
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String, GraphError> {
        Ok(serde_json::to_string_pretty(&self.snapshot())?)
    }

    pub fn from_json(s: &str) -> Result<Self, GraphError> {
        Self::from_snapshot(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Merges the article node keyed by DOI and refreshes its properties.
pub fn upsert_article(g: &mut Graph, record: &MetadataRecord) -> Result<NodeRef, GraphError> {
    let doi = record.doi.trim();
    if doi.is_empty() {
        return Err(GraphError::MissingDoi);
    }
    let mut props = vec![
        ("doi".to_string(), Value::from(doi)),
        ("title".to_string(), Value::from(record.title.clone())),
        ("citation_count".to_string(), Value::from(record.citation_count)),
        ("zotero_key".to_string(), Value::from(record.zotero_key.clone())),
    ];
    if let Some(topic) = &record.primary_topic {
        props.push(("primary_topic".to_string(), topic.clone()));
    }
    for key in ["dominant_topic", "topic_keywords", "topic_label"] {
        if let Some(v) = record.extracted_fields.get(key) {
            props.push((key.to_string(), serde_json::to_value(v)?));
        }
    }
    Ok(g.merge_node(NodeRef::article(doi), props))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMapping {
    pub label: String,
    pub relationship: String,
    /// Synonym dictionary used to canonicalize values before merging.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<String>,
}

/// Extracted field name to the entity it produces.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldMappings(pub IndexMap<String, EntityMapping>);

impl FieldMappings {
    pub fn validate(&self) -> Result<(), GraphError> {
        for (field, m) in &self.0 {
            let reason = if m.label.trim().is_empty() {
                "empty entity label"
            } else if m.relationship.trim().is_empty() {
                "empty relationship type"
            } else {
                continue;
            };
            return Err(GraphError::InvalidMapping { field: field.clone(), reason: reason.into() });
        }
        Ok(())
    }

    /// Mapping for the cardiovascular/ozone literature schema.
    pub fn cardio_ozone() -> Self {
        let m = |label: &str, rel: &str, dict: &str| EntityMapping {
            label: label.into(),
            relationship: rel.into(),
            dictionary: Some(dict.into()),
        };
        Self(IndexMap::from([
            ("ml_methods_used".to_string(), m("MLMethod", USES_ML_METHOD, "ML_AI_METHODS_SYNONYMS")),
            ("pollutants".to_string(), m("PollutantTerm", RELATED_TO_POLLUTANT, "POLLUTANT_SYNONYMS")),
            ("heart_diseases".to_string(), m("HeartDisease", ASSOCIATED_WITH_HEART_DISEASE, "HEART_DISEASE_SYNONYMS")),
            ("study_type".to_string(), m("StudyType", STUDY_TYPE, "STUDY_TYPE_SYNONYMS")),
        ]))
    }
}

fn canonical_value(raw: &str, mapping: &EntityMapping, unifier: Option<&dyn TermUnifier>) -> Option<String> {
    match (&mapping.dictionary, unifier) {
        (Some(dict), Some(u)) => match u.unify(raw, dict) {
            Ok(found) => found,
            Err(e) => {
                warn!(term = raw, dictionary = %dict, error = %e, "unification failed, value dropped");
                None
            }
        },
        _ => Some(raw.to_string()),
    }
}

/// Links the article to one entity node per mapped field value. Returns the
/// edges that did not exist before.
pub fn apply_field_mappings(
    g: &mut Graph,
    record: &MetadataRecord,
    mappings: &FieldMappings,
    unifier: Option<&dyn TermUnifier>,
) -> Result<Vec<Edge>, GraphError> {
    mappings.validate()?;
    let article = NodeRef::article(record.doi.trim());
    if g.node(&article).is_none() {
        return Err(GraphError::MissingArticle(article.key));
    }
    let mut created = Vec::new();
    for (field, mapping) in &mappings.0 {
        let Some(value) = record.extracted_fields.get(field) else { continue };
        for item in value.items() {
            let Some(name) = canonical_value(&item, mapping, unifier) else {
                debug!(field = %field, term = %item, "no canonical match");
                continue;
            };
            let node = g.merge_node(NodeRef::new(&mapping.label, &name), [("name".to_string(), Value::from(name.clone()))]);
            if g.merge_edge(article.clone(), &mapping.relationship, node.clone())? {
                created.push(Edge { from: article.clone(), kind: mapping.relationship.clone(), to: node });
            }
        }
    }
    Ok(created)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodQuery {
    /// Lowercased study-type names that disqualify an article.
    pub excluded_study_types: Vec<String>,
    pub pollutant_substring: String,
    pub excluded_title_terms: Vec<String>,
}

impl Default for MethodQuery {
    fn default() -> Self {
        Self {
            excluded_study_types: [
                "review",
                "systematic review",
                "meta-analysis",
                "expert opinion",
                "scoping review",
                "dissertation/thesis",
                "short communication",
                "methodological paper",
                "theoretical study",
                "report",
            ]
            .map(String::from)
            .to_vec(),
            pollutant_substring: "ozone".into(),
            excluded_title_terms: vec!["comment".into(), "reply".into()],
        }
    }
}

fn entity_name(r: &NodeRef, g: &Graph) -> String {
    g.node(r).and_then(|p| p.get("name")).and_then(Value::as_str).unwrap_or(&r.key).to_string()
}

/// Distinct-article counts per ML method among empirical studies linking
/// the pollutant to heart disease, by count descending then name ascending.
pub fn query_method_distribution(g: &Graph, q: &MethodQuery) -> Vec<(String, usize)> {
    let mut out_edges: HashMap<&NodeRef, Vec<&Edge>> = HashMap::new();
    for e in g.edges() {
        out_edges.entry(&e.from).or_default().push(e);
    }
    let pollutant = q.pollutant_substring.to_lowercase();
    let mut per_method: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (article, props) in g.nodes().filter(|(r, _)| r.label == ARTICLE) {
        let edges = out_edges.get(article).map(Vec::as_slice).unwrap_or(&[]);
        let of = |kind: &'static str| edges.iter().filter(move |e| e.kind == kind).map(|e| &e.to);
        let study_types: Vec<String> = of(STUDY_TYPE).map(|t| entity_name(t, g).to_lowercase()).collect();
        if study_types.is_empty() || study_types.iter().any(|s| q.excluded_study_types.contains(s)) {
            continue;
        }
        if of(USES_ML_METHOD).next().is_none() || of(ASSOCIATED_WITH_HEART_DISEASE).next().is_none() {
            continue;
        }
        if !of(RELATED_TO_POLLUTANT).any(|p| entity_name(p, g).to_lowercase().contains(&pollutant)) {
            continue;
        }
        let title = props.get("title").and_then(Value::as_str).unwrap_or_default().to_lowercase();
        if q.excluded_title_terms.iter().any(|t| title.contains(&t.to_lowercase())) {
            continue;
        }
        let doi = props.get("doi").and_then(Value::as_str).unwrap_or(&article.key).to_string();
        for m in of(USES_ML_METHOD) {
            per_method.entry(entity_name(m, g)).or_default().insert(doi.clone());
        }
    }
    let mut rows: Vec<(String, usize)> = per_method.into_iter().map(|(m, dois)| (m, dois.len())).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rows
}

/// Articles linked to any of `entities`, ranked by the number of distinct
/// entities matched (descending), then DOI ascending.
pub fn graph_search(g: &Graph, entities: &[NodeRef]) -> Vec<(String, usize)> {
    let wanted: BTreeSet<&NodeRef> = entities.iter().collect();
    let mut hits: BTreeMap<&str, BTreeSet<&NodeRef>> = BTreeMap::new();
    for e in g.edges() {
        if e.from.label == ARTICLE && wanted.contains(&e.to) {
            hits.entry(e.from.key.as_str()).or_default().insert(&e.to);
        }
    }
    let mut rows: Vec<(String, usize)> = hits.into_iter().map(|(doi, s)| (doi.to_string(), s.len())).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    rows
}
