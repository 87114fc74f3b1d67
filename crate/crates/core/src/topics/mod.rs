//! Topic modeling: vocabulary pruning, phrase detection, LDA by collapsed
//! Gibbs sampling, document-level NPMI coherence and coherence-driven model
//! selection.

mod coherence;
mod lda;
mod preprocess;
mod search;
mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use coherence::{npmi, topic_coherence, CooccurrenceStats, NPMI_EPS};
pub use lda::{assign_dominant_topic, train_lda, LdaConfig, LdaModel};
pub use preprocess::{DefaultNormalizer, TextNormalizer, STOPWORDS};
pub use search::{grid_search, grid_search_with_phrases, CandidateScore, GridSpec, SearchResult, VocabFilter};
pub use vocab::{build_vocabulary, form_ngrams, phrase_score, Vocabulary, PHRASE_DISCOUNT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopicsError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid LDA configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid vocabulary filter: {0}")]
    InvalidFilter(String),
    #[error("co-occurrence statistics cover no documents")]
    NoDocuments,
    #[error("term `{0}` never occurs in the reference corpus")]
    UnknownTerm(String),
    #[error("coherence needs at least two words, got {0}")]
    TooFewWords(usize),
    #[error("search space is empty")]
    EmptySearchSpace,
    #[error("document index {index} out of range ({len} documents)")]
    DocumentOutOfRange { index: usize, len: usize },
}

/// Tokenized documents after preprocessing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Vec<String>>,
}

impl Corpus {
    pub fn new(documents: Vec<Vec<String>>) -> Self {
        Self { documents }
    }

    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, normalizer: &dyn TextNormalizer) -> Self {
        Self { documents: texts.into_iter().map(|t| normalizer.normalize(t)).collect() }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    /// Drops tokens that are not in `vocab`.
    pub fn restrict_to(&self, vocab: &Vocabulary) -> Corpus {
        Corpus {
            documents: self
                .documents
                .iter()
                .map(|d| d.iter().filter(|t| vocab.contains(t)).cloned().collect())
                .collect(),
        }
    }
}
