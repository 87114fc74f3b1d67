use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, TopicsError, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub num_topics: usize,
    /// Symmetric document-topic prior; `None` means `1 / num_topics`.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub bigram_threshold: f64,
    #[serde(default = "default_threshold")]
    pub trigram_threshold: f64,
}

fn default_eta() -> f64 {
    0.01
}

fn default_iterations() -> usize {
    200
}

fn default_threshold() -> f64 {
    100.0
}

impl LdaConfig {
    pub fn new(num_topics: usize, seed: u64) -> Self {
        Self {
            num_topics,
            alpha: None,
            eta: default_eta(),
            iterations: default_iterations(),
            seed,
            bigram_threshold: default_threshold(),
            trigram_threshold: default_threshold(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(1.0 / self.num_topics as f64)
    }

    pub fn validate(&self) -> Result<(), TopicsError> {
        let bad = |m: &str| Err(TopicsError::InvalidConfig(m.to_string()));
        if self.num_topics < 2 {
            return bad("num_topics must be at least 2");
        }
        if !(self.alpha() > 0.0) || !self.alpha().is_finite() {
            return bad("alpha must be positive");
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return bad("eta must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if !(self.bigram_threshold > 0.0) || !(self.trigram_threshold > 0.0) {
            return bad("phrase thresholds must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub config: LdaConfig,
    pub vocab: Vec<String>,
    /// θ, one row per document.
    pub doc_topic: Vec<Vec<f64>>,
    /// φ, one row per topic.
    pub topic_word: Vec<Vec<f64>>,
}

impl LdaModel {
    pub fn num_topics(&self) -> usize {
        self.topic_word.len()
    }

    /// The `n` most probable words of `topic`, ties broken by vocabulary order.
    pub fn top_words(&self, topic: usize, n: usize) -> Vec<String> {
        let row = &self.topic_word[topic];
        let mut ids: Vec<usize> = (0..row.len()).collect();
        ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        ids.into_iter().take(n).map(|i| self.vocab[i].clone()).collect()
    }

    pub fn dominant_topics(&self) -> Vec<usize> {
        self.doc_topic.iter().map(|row| argmax(row)).collect()
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Highest-probability topic of a document; ties go to the lowest id.
pub fn assign_dominant_topic(model: &LdaModel, doc_index: usize) -> Result<usize, TopicsError> {
    let row = model
        .doc_topic
        .get(doc_index)
        .ok_or(TopicsError::DocumentOutOfRange { index: doc_index, len: model.doc_topic.len() })?;
    Ok(argmax(row))
}

/// Collapsed Gibbs sampling. Tokens outside `vocab` are ignored.
pub fn train_lda(corpus: &Corpus, vocab: &Vocabulary, cfg: &LdaConfig) -> Result<LdaModel, TopicsError> {
    cfg.validate()?;
    if vocab.is_empty() {
        return Err(TopicsError::EmptyVocabulary);
    }
    if corpus.is_empty() {
        return Err(TopicsError::EmptyCorpus);
    }
    let k = cfg.num_topics;
    let v = vocab.len();
    let alpha = cfg.alpha();
    let eta = cfg.eta;
    let v_eta = v as f64 * eta;

    let docs: Vec<Vec<usize>> =
        corpus.documents.iter().map(|d| d.iter().filter_map(|t| vocab.id(t)).collect()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut n_dt = vec![vec![0u32; k]; docs.len()];
    let mut n_tw = vec![vec![0u32; v]; k];
    let mut n_t = vec![0u32; k];
    let mut z: Vec<Vec<usize>> = Vec::with_capacity(docs.len());
    for (d, doc) in docs.iter().enumerate() {
        let zd: Vec<usize> = doc
            .iter()
            .map(|&w| {
                let t = rng.gen_range(0..k);
                n_dt[d][t] += 1;
                n_tw[t][w] += 1;
                n_t[t] += 1;
                t
            })
            .collect();
        z.push(zd);
    }

    let mut weights = vec![0.0f64; k];
    for _ in 0..cfg.iterations {
        for (d, doc) in docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = z[d][i];
                n_dt[d][old] -= 1;
                n_tw[old][w] -= 1;
                n_t[old] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    total += (n_dt[d][t] as f64 + alpha) * (n_tw[t][w] as f64 + eta) / (n_t[t] as f64 + v_eta);
                    weights[t] = total;
                }
                let u = rng.gen::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);
                z[d][i] = new;
                n_dt[d][new] += 1;
                n_tw[new][w] += 1;
                n_t[new] += 1;
            }
        }
    }

    let k_alpha = k as f64 * alpha;
    let doc_topic = docs
        .iter()
        .enumerate()
        .map(|(d, doc)| {
            let denom = doc.len() as f64 + k_alpha;
            normalize((0..k).map(|t| (n_dt[d][t] as f64 + alpha) / denom).collect())
        })
        .collect();
    let topic_word = (0..k)
        .map(|t| {
            let denom = n_t[t] as f64 + v_eta;
            normalize((0..v).map(|w| (n_tw[t][w] as f64 + eta) / denom).collect())
        })
        .collect();
    Ok(LdaModel { config: cfg.clone(), vocab: vocab.terms.clone(), doc_topic, topic_word })
}

// The closed-form rows already sum to 1 up to rounding; this removes the drift.
fn normalize(mut row: Vec<f64>) -> Vec<f64> {
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= s);
    row
}
