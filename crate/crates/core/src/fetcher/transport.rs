use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("transport error for {url}: {message}")]
pub struct TransportError {
    pub url: String,
    pub message: String,
}

/// Network access used by the fetcher. Implementations must tolerate
/// concurrent calls.
pub trait Transport: Send + Sync {
    /// `Ok(None)` means the endpoint answered without usable JSON.
    fn fetch_json(&self, url: &str) -> Result<Option<Value>, TransportError>;
    fn download(&self, url: &str) -> Result<Option<Vec<u8>>, TransportError>;
}

pub fn url_hash(url: &str) -> String {
    hex::encode(Sha256::digest(url.as_bytes()))
}

/// Serves responses from a directory keyed by the SHA-256 of the URL:
/// `<hash>.json` for metadata, `<hash>.bin` for downloads and `<hash>.err`
/// (containing a message) for a simulated failure.
#[derive(Debug, Clone)]
pub struct FixtureTransport {
    dir: PathBuf,
}

impl FixtureTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, url: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{}.{ext}", url_hash(url)))
    }

    fn check_error(&self, url: &str) -> Result<(), TransportError> {
        match std::fs::read_to_string(self.path(url, "err")) {
            Ok(message) => Err(TransportError {
                url: url.to_string(),
                message: message.trim().to_string(),
            }),
            Err(_) => Ok(()),
        }
    }

    pub fn put_json(&self, url: &str, value: &Value) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(self.path(url, "json"), serde_json::to_vec_pretty(value)?)
    }

    pub fn put_bytes(&self, url: &str, bytes: &[u8]) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(self.path(url, "bin"), bytes)
    }

    pub fn put_error(&self, url: &str, message: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(self.path(url, "err"), message)
    }
}

impl Transport for FixtureTransport {
    fn fetch_json(&self, url: &str) -> Result<Option<Value>, TransportError> {
        self.check_error(url)?;
        let Ok(bytes) = std::fs::read(self.path(url, "json")) else {
            return Ok(None);
        };
        serde_json::from_slice(&bytes).map(Some).map_err(|e| TransportError {
            url: url.to_string(),
            message: format!("malformed fixture: {e}"),
        })
    }

    fn download(&self, url: &str) -> Result<Option<Vec<u8>>, TransportError> {
        self.check_error(url)?;
        Ok(std::fs::read(self.path(url, "bin")).ok())
    }
}

/// In-memory transport for tests and embedding.
#[derive(Debug, Clone, Default)]
pub struct MemoryTransport {
    pub json: HashMap<String, Value>,
    pub bytes: HashMap<String, Vec<u8>>,
    pub errors: HashMap<String, String>,
}

impl MemoryTransport {
    fn err(&self, url: &str) -> Result<(), TransportError> {
        match self.errors.get(url) {
            Some(m) => Err(TransportError { url: url.to_string(), message: m.clone() }),
            None => Ok(()),
        }
    }
}

impl Transport for MemoryTransport {
    fn fetch_json(&self, url: &str) -> Result<Option<Value>, TransportError> {
        self.err(url)?;
        Ok(self.json.get(url).cloned())
    }

    fn download(&self, url: &str) -> Result<Option<Vec<u8>>, TransportError> {
        self.err(url)?;
        Ok(self.bytes.get(url).cloned())
    }
}
