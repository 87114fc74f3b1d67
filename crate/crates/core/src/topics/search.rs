use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::{
    build_vocabulary, form_ngrams, topic_coherence, train_lda, CooccurrenceStats, Corpus, LdaConfig, LdaModel,
    TopicsError, Vocabulary,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabFilter {
    pub no_below: usize,
    pub no_above: f64,
}

impl Default for VocabFilter {
    fn default() -> Self {
        Self { no_below: 2, no_above: 0.9 }
    }
}

/// A cartesian grid of LDA hyperparameters, as read from a grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub num_topics: Vec<usize>,
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default = "default_etas")]
    pub eta: Vec<f64>,
    #[serde(default = "default_iterations")]
    pub iterations: Vec<usize>,
    #[serde(default = "default_thresholds")]
    pub bigram_threshold: Vec<f64>,
    #[serde(default = "default_thresholds")]
    pub trigram_threshold: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub filter: VocabFilter,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
}

fn default_etas() -> Vec<f64> {
    vec![0.01]
}

fn default_iterations() -> Vec<usize> {
    vec![200]
}

fn default_thresholds() -> Vec<f64> {
    vec![100.0]
}

fn default_top_n() -> usize {
    10
}

impl GridSpec {
    /// All combinations, varying the last-listed parameter fastest.
    pub fn expand(&self) -> Vec<LdaConfig> {
        let alphas: Vec<Option<f64>> =
            if self.alpha.is_empty() { vec![None] } else { self.alpha.iter().copied().map(Some).collect() };
        let mut out = Vec::new();
        for &bigram_threshold in &self.bigram_threshold {
            for &trigram_threshold in &self.trigram_threshold {
                for &num_topics in &self.num_topics {
                    for &alpha in &alphas {
                        for &eta in &self.eta {
                            for &iterations in &self.iterations {
                                out.push(LdaConfig {
                                    num_topics,
                                    alpha,
                                    eta,
                                    iterations,
                                    seed: self.seed,
                                    bigram_threshold,
                                    trigram_threshold,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub config: LdaConfig,
    pub mean_coherence: f64,
    pub topic_coherences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: LdaModel,
    pub best_index: usize,
    pub candidates: Vec<CandidateScore>,
}

fn score(model: &LdaModel, stats: &CooccurrenceStats, top_n: usize) -> Result<CandidateScore, TopicsError> {
    let topic_coherences = (0..model.num_topics())
        .map(|t| topic_coherence(&model.top_words(t, top_n), stats))
        .collect::<Result<Vec<_>, _>>()?;
    let mean_coherence = topic_coherences.iter().sum::<f64>() / topic_coherences.len() as f64;
    Ok(CandidateScore { config: model.config.clone(), mean_coherence, topic_coherences })
}

fn pick(results: Vec<(LdaModel, CandidateScore)>) -> SearchResult {
    let mut best_index = 0;
    for (i, (_, s)) in results.iter().enumerate() {
        if s.mean_coherence > results[best_index].1.mean_coherence {
            best_index = i;
        }
    }
    let mut candidates = Vec::with_capacity(results.len());
    let mut best = None;
    for (i, (model, s)) in results.into_iter().enumerate() {
        if i == best_index {
            best = Some(model);
        }
        candidates.push(s);
    }
    let best = best.expect("non-empty results");
    info!(best_index, coherence = candidates[best_index].mean_coherence, "grid search done");
    SearchResult { best, best_index, candidates }
}

/// Trains one model per configuration over a fixed corpus and vocabulary and
/// keeps the one with the highest mean topic coherence. Ties go to the
/// earliest configuration.
pub fn grid_search(
    corpus: &Corpus,
    vocab: &Vocabulary,
    space: &[LdaConfig],
    top_n: usize,
) -> Result<SearchResult, TopicsError> {
    if space.is_empty() {
        return Err(TopicsError::EmptySearchSpace);
    }
    let stats = CooccurrenceStats::from_corpus(&corpus.restrict_to(vocab));
    let results = space
        .par_iter()
        .map(|cfg| {
            let model = train_lda(corpus, vocab, cfg)?;
            let s = score(&model, &stats, top_n)?;
            Ok((model, s))
        })
        .collect::<Result<Vec<_>, TopicsError>>()?;
    Ok(pick(results))
}

/// Like [`grid_search`], but phrase detection and vocabulary pruning are
/// redone for each distinct pair of phrase thresholds in `space`.
pub fn grid_search_with_phrases(
    corpus: &Corpus,
    filter: VocabFilter,
    space: &[LdaConfig],
    top_n: usize,
) -> Result<SearchResult, TopicsError> {
    if space.is_empty() {
        return Err(TopicsError::EmptySearchSpace);
    }
    let mut prepared: Vec<((u64, u64), Corpus, Vocabulary, CooccurrenceStats)> = Vec::new();
    for cfg in space {
        let key = (cfg.bigram_threshold.to_bits(), cfg.trigram_threshold.to_bits());
        if prepared.iter().any(|(k, ..)| *k == key) {
            continue;
        }
        let phrased = form_ngrams(corpus, cfg.bigram_threshold, cfg.trigram_threshold);
        let vocab = build_vocabulary(&phrased, filter.no_below, filter.no_above)?;
        let stats = CooccurrenceStats::from_corpus(&phrased.restrict_to(&vocab));
        prepared.push((key, phrased, vocab, stats));
    }
    let results = space
        .par_iter()
        .map(|cfg| {
            let key = (cfg.bigram_threshold.to_bits(), cfg.trigram_threshold.to_bits());
            let (_, phrased, vocab, stats) = prepared.iter().find(|(k, ..)| *k == key).expect("prepared");
            let model = train_lda(phrased, vocab, cfg)?;
            let s = score(&model, stats, top_n)?;
            Ok((model, s))
        })
        .collect::<Result<Vec<_>, TopicsError>>()?;
    Ok(pick(results))
}
