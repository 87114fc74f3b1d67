//! Token-count windows with overlap, shared by extraction and indexing.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChunkError {
    #[error("max_tokens must be positive")]
    ZeroMax,
    #[error("overlap {overlap} must be smaller than max_tokens {max_tokens}")]
    OverlapTooLarge { max_tokens: usize, overlap: usize },
    #[error("tokenizer failure: {0}")]
    Tokenizer(String),
}

pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Result<Vec<String>, ChunkError>;
    fn decode(&self, tokens: &[String]) -> Result<String, ChunkError>;
}

/// Splits on Unicode whitespace and joins with single spaces.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn encode(&self, text: &str) -> Result<Vec<String>, ChunkError> {
        Ok(text.split_whitespace().map(str::to_string).collect())
    }

    fn decode(&self, tokens: &[String]) -> Result<String, ChunkError> {
        Ok(tokens.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSpec {
    pub max_tokens: usize,
    pub overlap: usize,
}

impl ChunkSpec {
    /// Window size used for embedding.
    pub const INDEXING: ChunkSpec = ChunkSpec { max_tokens: 7000, overlap: 200 };
    /// Window size used for field extraction.
    pub const EXTRACTION: ChunkSpec = ChunkSpec { max_tokens: 8000, overlap: 500 };

    pub fn new(max_tokens: usize, overlap: usize) -> Result<Self, ChunkError> {
        let spec = Self { max_tokens, overlap };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.max_tokens == 0 {
            return Err(ChunkError::ZeroMax);
        }
        if self.overlap >= self.max_tokens {
            return Err(ChunkError::OverlapTooLarge { max_tokens: self.max_tokens, overlap: self.overlap });
        }
        Ok(())
    }
}

impl Default for ChunkSpec {
    fn default() -> Self {
        Self::INDEXING
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_idx: usize,
    pub chunk_idx: usize,
    pub text: String,
}

/// Token ranges of the windows over `n` tokens. A text that fits in one
/// window yields the single range `0..n`.
pub fn window_ranges(n: usize, spec: ChunkSpec) -> Vec<Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    if n <= spec.max_tokens {
        return vec![0..n];
    }
    let stride = spec.max_tokens - spec.overlap;
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + spec.max_tokens).min(n);
        out.push(start..end);
        if end >= n {
            break;
        }
        start += stride;
    }
    out
}

/// Splits `text` into overlapping windows of at most `spec.max_tokens`
/// tokens. Text that fits is returned verbatim; a tokenizer failure falls
/// back to the whole text as one chunk.
pub fn chunk_text(text: &str, spec: ChunkSpec, tok: &dyn Tokenizer) -> Result<Vec<String>, ChunkError> {
    spec.validate()?;
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let split = || -> Result<Vec<String>, ChunkError> {
        let tokens = tok.encode(text)?;
        if tokens.len() <= spec.max_tokens {
            return Ok(vec![text.to_string()]);
        }
        window_ranges(tokens.len(), spec)
            .into_iter()
            .map(|r| tok.decode(&tokens[r]))
            .collect()
    };
    match split() {
        Ok(chunks) => Ok(chunks),
        Err(e) => {
            warn!(error = %e, "chunking failed, keeping text whole");
            Ok(vec![text.to_string()])
        }
    }
}

/// Chunks one document and numbers the pieces from 0.
pub fn chunk_document(doc_idx: usize, text: &str, spec: ChunkSpec, tok: &dyn Tokenizer) -> Result<Vec<Chunk>, ChunkError> {
    Ok(chunk_text(text, spec, tok)?
        .into_iter()
        .enumerate()
        .map(|(chunk_idx, text)| Chunk { doc_idx, chunk_idx, text })
        .collect())
}
