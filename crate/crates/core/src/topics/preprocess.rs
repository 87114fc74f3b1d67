/// Turns raw text into the tokens fed to the topic model.
pub trait TextNormalizer: Send + Sync {
    fn normalize(&self, text: &str) -> Vec<String>;
}

/// Lowercases, splits on anything that is not alphanumeric, and drops
/// stopwords, single characters and pure numbers. No lemmatization.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultNormalizer;

impl TextNormalizer for DefaultNormalizer {
    fn normalize(&self, text: &str) -> Vec<String> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| t.chars().count() > 1)
            .filter(|t| !t.chars().all(|c| c.is_ascii_digit()))
            .filter(|t| STOPWORDS.binary_search(t).is_err())
            .map(str::to_string)
            .collect()
    }
}

/// English stopwords, sorted for binary search.
pub const STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "against", "all", "also", "am", "among", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "down", "during", "each", "et", "etc", "few", "for", "from", "further", "had", "has", "have",
    "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "however", "if", "in", "into",
    "is", "it", "its", "itself", "just", "may", "me", "might", "more", "most", "must", "my", "myself", "no", "nor",
    "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own",
    "same", "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them", "themselves",
    "then", "there", "these", "they", "this", "those", "through", "thus", "to", "too", "under", "until", "up", "upon",
    "us", "used", "using", "very", "via", "was", "we", "were", "what", "when", "where", "whether", "which", "while",
    "who", "whom", "why", "will", "with", "within", "without", "would", "you", "your", "yours", "yourself",
    "yourselves",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_sorted() {
        assert!(STOPWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn normalizes() {
        let toks = DefaultNormalizer.normalize("The Ozone exposure (O3) was 2019 linked to CVD-risk; a b");
        assert_eq!(toks, ["ozone", "exposure", "o3", "linked", "cvd", "risk"]);
    }
}
