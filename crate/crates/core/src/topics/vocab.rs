use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Corpus, TopicsError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Retained terms, sorted.
    pub terms: Vec<String>,
    pub doc_frequency: BTreeMap<String, usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_doc_frequency(doc_frequency: BTreeMap<String, usize>) -> Self {
        let terms: Vec<String> = doc_frequency.keys().cloned().collect();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { terms, doc_frequency, index }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<usize> {
        if self.index.len() != self.terms.len() {
            return self.terms.binary_search_by(|t| t.as_str().cmp(term)).ok();
        }
        self.index.get(term).copied()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.id(term).is_some()
    }
}

/// Keeps terms appearing in at least `no_below` documents and in at most a
/// `no_above` fraction of documents.
pub fn build_vocabulary(corpus: &Corpus, no_below: usize, no_above: f64) -> Result<Vocabulary, TopicsError> {
    if no_below < 1 {
        return Err(TopicsError::InvalidFilter("no_below must be at least 1".into()));
    }
    if !(no_above > 0.0 && no_above <= 1.0) {
        return Err(TopicsError::InvalidFilter("no_above must be in (0, 1]".into()));
    }
    let n_docs = corpus.len();
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in &corpus.documents {
        let unique: HashSet<&String> = doc.iter().collect();
        for t in unique {
            *df.entry(t.clone()).or_default() += 1;
        }
    }
    df.retain(|_, count| *count >= no_below && (*count as f64 / n_docs as f64) <= no_above);
    Ok(Vocabulary::from_doc_frequency(df))
}

/// Count discount of the collocation score.
pub const PHRASE_DISCOUNT: f64 = 5.0;

/// `(count(a,b) − δ) · N / (count(a) · count(b))`.
pub fn phrase_score(pair_count: usize, count_a: usize, count_b: usize, total_tokens: usize) -> f64 {
    (pair_count as f64 - PHRASE_DISCOUNT) * total_tokens as f64 / (count_a as f64 * count_b as f64)
}

fn phrase_pass(corpus: &Corpus, threshold: f64) -> Corpus {
    let total = corpus.total_tokens();
    let mut unigrams: HashMap<&str, usize> = HashMap::new();
    let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
    for doc in &corpus.documents {
        for t in doc {
            *unigrams.entry(t).or_default() += 1;
        }
        for w in doc.windows(2) {
            *pairs.entry((&w[0], &w[1])).or_default() += 1;
        }
    }
    let fuse = |a: &str, b: &str| {
        let pc = pairs.get(&(a, b)).copied().unwrap_or(0);
        phrase_score(pc, unigrams[a], unigrams[b], total) >= threshold
    };
    let documents = corpus
        .documents
        .iter()
        .map(|doc| {
            let mut out = Vec::with_capacity(doc.len());
            let mut i = 0;
            while i < doc.len() {
                if i + 1 < doc.len() && fuse(&doc[i], &doc[i + 1]) {
                    out.push(format!("{}_{}", doc[i], doc[i + 1]));
                    i += 2;
                } else {
                    out.push(doc[i].clone());
                    i += 1;
                }
            }
            out
        })
        .collect();
    Corpus { documents }
}

/// Fuses frequent adjacent pairs into `a_b` tokens, then runs a second pass
/// over the fused stream to form trigrams. Pairs are taken greedily left to
/// right.
pub fn form_ngrams(corpus: &Corpus, bigram_threshold: f64, trigram_threshold: f64) -> Corpus {
    let bigrams = phrase_pass(corpus, bigram_threshold);
    phrase_pass(&bigrams, trigram_threshold)
}
