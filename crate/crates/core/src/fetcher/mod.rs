//! Rate-limited open-access PDF acquisition over a pluggable transport.

mod limiter;
mod transport;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::{debug, warn};

pub use limiter::{Clock, RateLimit, SimulatedClock, SystemClock, TokenBucket};
pub use transport::{url_hash, FixtureTransport, MemoryTransport, Transport, TransportError};

pub const UNPAYWALL_API: &str = "https://api.unpaywall.org/v2";

pub fn unpaywall_url(doi: &str, email: &str) -> String {
    format!("{UNPAYWALL_API}/{doi}?email={email}")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OALocation {
    #[serde(default)]
    pub url_for_pdf: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OAResponse {
    #[serde(default)]
    pub best_oa_location: Option<OALocation>,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub oa_locations: Vec<OALocation>,
}

fn null_as_empty<'de, D: serde::Deserializer<'de>>(de: D) -> Result<Vec<OALocation>, D::Error> {
    Ok(Option::<Vec<OALocation>>::deserialize(de)?.unwrap_or_default())
}

/// Candidate PDF URLs: the best location first, then every listed location
/// in order. Locations without a PDF URL are skipped; duplicates are kept.
pub fn plan_candidates(resp: &OAResponse) -> Vec<String> {
    resp.best_oa_location
        .iter()
        .chain(resp.oa_locations.iter())
        .filter_map(|loc| loc.url_for_pdf.as_deref())
        .filter(|u| !u.is_empty())
        .map(str::to_string)
        .collect()
}

fn unsafe_chars() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"[\\/*?:"<>|()]+"#).unwrap())
}

pub fn sanitize_filename(title: &str, doi: &str, row_idx: usize) -> String {
    let cleaned = unsafe_chars().replace_all(title, "");
    let truncated: String = cleaned.chars().take(100).collect();
    let stem = if truncated.is_empty() { doi } else { truncated.as_str() };
    format!("{stem}_{row_idx}.pdf")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchTask {
    pub row_idx: usize,
    pub doi: String,
    pub title: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FetchStatus {
    Saved,
    #[serde(rename = "Unpaywall_fail")]
    UnpaywallFail,
    #[serde(rename = "No_PDF")]
    NoPdf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchOutcome {
    pub row_idx: usize,
    pub pdf_path: Option<PathBuf>,
    pub status: FetchStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Metadata,
    Download,
}

/// One transport call, stamped with the instant its rate-limit permit was
/// granted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub at: Duration,
    pub kind: CallKind,
    pub url: String,
}

/// Destination for downloaded PDFs.
pub trait PdfSink: Send + Sync {
    fn store(&self, file_name: &str, bytes: &[u8]) -> std::io::Result<PathBuf>;
}

#[derive(Debug, Clone)]
pub struct DirSink {
    dir: PathBuf,
}

impl DirSink {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl PdfSink for DirSink {
    fn store(&self, file_name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let path = self.dir.join(file_name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        Ok(path)
    }
}

/// Keeps stored files in memory, keyed by the returned path.
#[derive(Debug, Default)]
pub struct MemorySink {
    files: Mutex<Vec<(PathBuf, Vec<u8>)>>,
}

impl MemorySink {
    pub fn get(&self, path: &Path) -> Option<Vec<u8>> {
        self.files
            .lock()
            .unwrap()
            .iter()
            .find(|(p, _)| p == path)
            .map(|(_, b)| b.clone())
    }
}

impl PdfSink for MemorySink {
    fn store(&self, file_name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let path = PathBuf::from(file_name);
        self.files.lock().unwrap().push((path.clone(), bytes.to_vec()));
        Ok(path)
    }
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub limit: RateLimit,
    pub max_concurrency: usize,
    pub email: String,
}

#[derive(Debug, Clone, Default)]
pub struct FetchRun {
    /// One outcome per task, in task order.
    pub outcomes: Vec<FetchOutcome>,
    /// Every transport call, ordered by permit time.
    pub calls: Vec<CallRecord>,
}

struct Limited<'a> {
    transport: &'a dyn Transport,
    bucket: TokenBucket<'a>,
    calls: Mutex<Vec<CallRecord>>,
}

impl Limited<'_> {
    fn permit(&self, kind: CallKind, url: &str) {
        let at = self.bucket.acquire();
        self.calls.lock().unwrap().push(CallRecord { at, kind, url: url.to_string() });
    }

    fn fetch_json(&self, url: &str) -> Result<Option<Value>, TransportError> {
        self.permit(CallKind::Metadata, url);
        self.transport.fetch_json(url)
    }

    fn download(&self, url: &str) -> Result<Option<Vec<u8>>, TransportError> {
        self.permit(CallKind::Download, url);
        self.transport.download(url)
    }
}

fn run_task(task: &FetchTask, net: &Limited<'_>, sink: &dyn PdfSink, email: &str) -> FetchOutcome {
    let fail = |status| FetchOutcome { row_idx: task.row_idx, pdf_path: None, status };
    let api_url = unpaywall_url(&task.doi, email);
    let data = match net.fetch_json(&api_url) {
        Ok(Some(v)) => v,
        Ok(None) => return fail(FetchStatus::UnpaywallFail),
        Err(e) => {
            warn!(row = task.row_idx, error = %e, "metadata fetch failed");
            return fail(FetchStatus::UnpaywallFail);
        }
    };
    let resp: OAResponse = match serde_json::from_value(data) {
        Ok(r) => r,
        Err(e) => {
            warn!(row = task.row_idx, error = %e, "unreadable open-access response");
            return fail(FetchStatus::UnpaywallFail);
        }
    };
    for url in plan_candidates(&resp) {
        let bytes = match net.download(&url) {
            Ok(Some(b)) if !b.is_empty() => b,
            Ok(_) => continue,
            Err(e) => {
                debug!(row = task.row_idx, error = %e, "download failed, trying next candidate");
                continue;
            }
        };
        let name = sanitize_filename(&task.title, &task.doi, task.row_idx);
        match sink.store(&name, &bytes) {
            Ok(path) => {
                return FetchOutcome { row_idx: task.row_idx, pdf_path: Some(path), status: FetchStatus::Saved }
            }
            Err(e) => warn!(row = task.row_idx, error = %e, "could not store pdf"),
        }
    }
    fail(FetchStatus::NoPdf)
}

/// Runs every task with at most `max_concurrency` in flight and every
/// transport call gated by the rate limit.
pub fn rate_limited_execute(
    tasks: &[FetchTask],
    cfg: &FetchConfig,
    transport: &dyn Transport,
    sink: &dyn PdfSink,
    clock: &dyn Clock,
) -> FetchRun {
    if tasks.is_empty() {
        return FetchRun::default();
    }
    let net = Limited {
        transport,
        bucket: TokenBucket::new(cfg.limit, clock),
        calls: Mutex::new(Vec::new()),
    };
    let workers = cfg.max_concurrency.max(1).min(tasks.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<FetchOutcome>>> = Mutex::new(vec![None; tasks.len()]);

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let outcome = run_task(task, &net, sink, &cfg.email);
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    let mut calls = net.calls.into_inner().unwrap();
    calls.sort_by(|a, b| a.at.cmp(&b.at).then_with(|| a.url.cmp(&b.url)));
    let outcomes = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every task produces an outcome"))
        .collect();
    FetchRun { outcomes, calls }
}

/// Largest number of calls started inside any half-open window of `window`.
pub fn max_calls_in_window(calls: &[CallRecord], window: Duration) -> usize {
    let mut times: Vec<Duration> = calls.iter().map(|c| c.at).collect();
    times.sort();
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..times.len() {
        while times[hi] - times[lo] >= window {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}
