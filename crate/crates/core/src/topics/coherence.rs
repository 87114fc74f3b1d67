use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Corpus, TopicsError};

/// Smoothing added to joint counts so a never co-occurring pair stays finite.
pub const NPMI_EPS: f64 = 1e-12;

/// Boolean document-level occurrence statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceStats {
    pub num_docs: usize,
    /// Sorted indices of the documents containing each term.
    pub postings: BTreeMap<String, Vec<u32>>,
}

impl CooccurrenceStats {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut postings: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for (d, doc) in corpus.documents.iter().enumerate() {
            let unique: HashSet<&String> = doc.iter().collect();
            for t in unique {
                postings.entry(t.clone()).or_default().push(d as u32);
            }
        }
        Self { num_docs: corpus.len(), postings }
    }

    pub fn df(&self, w: &str) -> usize {
        self.postings.get(w).map_or(0, Vec::len)
    }

    pub fn df_pair(&self, a: &str, b: &str) -> usize {
        let (Some(pa), Some(pb)) = (self.postings.get(a), self.postings.get(b)) else {
            return 0;
        };
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < pa.len() && j < pb.len() {
            match pa[i].cmp(&pb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Normalized pointwise mutual information of two terms, in [-1, 1].
pub fn npmi(wi: &str, wj: &str, stats: &CooccurrenceStats, eps: f64) -> Result<f64, TopicsError> {
    if stats.num_docs == 0 {
        return Err(TopicsError::NoDocuments);
    }
    let d = stats.num_docs as f64;
    let (dfi, dfj) = (stats.df(wi), stats.df(wj));
    if dfi == 0 {
        return Err(TopicsError::UnknownTerm(wi.to_string()));
    }
    if dfj == 0 {
        return Err(TopicsError::UnknownTerm(wj.to_string()));
    }
    let dfij = stats.df_pair(wi, wj);
    // Both terms in every document: the ratio degenerates to 0/0.
    if dfij == stats.num_docs {
        return Ok(1.0);
    }
    let pi = dfi as f64 / d;
    let pj = dfj as f64 / d;
    let pij = (dfij as f64 + eps) / d;
    let value = (pij / (pi * pj)).ln() / -pij.ln();
    Ok(value.clamp(-1.0, 1.0))
}

/// Mean NPMI over all unordered pairs of `top_words`.
pub fn topic_coherence(top_words: &[String], stats: &CooccurrenceStats) -> Result<f64, TopicsError> {
    let n = top_words.len();
    if n < 2 {
        return Err(TopicsError::TooFewWords(n));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            sum += npmi(&top_words[i], &top_words[j], stats, NPMI_EPS)?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}
