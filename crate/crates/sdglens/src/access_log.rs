//! Sidecar access-log ingestion.
//!
//! A service mesh that injects an Envoy sidecar next to every workload can
//! log one JSON object per proxied request. Each sidecar sees traffic twice:
//! requests its own service sends (outbound) and requests the service
//! receives (inbound). This module parses those records, classifies their
//! direction, and resolves which service was calling which.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Normalized service identity in `<service>.<namespace>` form.
///
/// Workload instances come and go; the service name is the stable unit the
/// dependency graph is built over. The namespace is kept because different
/// namespaces may reuse service names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct ServiceId(String);

/// Rejected service identity.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceIdError {
    #[error("empty service identity")]
    Empty,
    #[error("invalid service identity {id:?}: {reason}")]
    Invalid { id: String, reason: String },
}

impl ServiceIdError {
    fn invalid(id: impl Into<String>, reason: impl Into<String>) -> Self {
        ServiceIdError::Invalid { id: id.into(), reason: reason.into() }
    }
}

impl ServiceId {
    /// Validate and wrap an already-normalized `<service>.<namespace>` name.
    pub fn new(id: impl Into<String>) -> Result<Self, ServiceIdError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ServiceIdError::Empty);
        }
        if id.contains(".svc.cluster.local") {
            return Err(ServiceIdError::invalid(id, "cluster DNS suffix not stripped"));
        }
        if !id.contains('.') {
            return Err(ServiceIdError::invalid(id, "missing namespace suffix"));
        }
        if id.split('.').any(str::is_empty) {
            return Err(ServiceIdError::invalid(id, "empty dot-separated label"));
        }
        if let Some(bad) = id.chars().find(|c| !is_id_char(*c)) {
            let reason = format!("unexpected character {bad:?}");
            return Err(ServiceIdError::invalid(id, reason));
        }
        Ok(ServiceId(id))
    }

    /// Normalize a cluster DNS name such as
    /// `b-service.default.svc.cluster.local:8080` down to `b-service.default`.
    pub fn from_cluster_dns(raw: &str) -> Result<Self, ServiceIdError> {
        let mut host = raw.trim();
        if let Some((head, port)) = host.rsplit_once(':') {
            if !port.is_empty() && port.bytes().all(|b| b.is_ascii_digit()) {
                host = head;
            }
        }
        let host = host.trim_end_matches('.');
        let host = host.strip_suffix(".svc.cluster.local").unwrap_or(host);
        ServiceId::new(host)
    }

    /// Full `<service>.<namespace>` name.
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Service half of the identity.
    pub fn service(&self) -> &str {
        self.0.rsplit_once('.').map_or(self.0.as_str(), |(service, _)| service)
    }

    /// Namespace half of the identity.
    pub fn namespace(&self) -> &str {
        self.0.rsplit_once('.').map_or("", |(_, namespace)| namespace)
    }
}

fn is_id_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')
}

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ServiceId {
    type Err = ServiceIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ServiceId::new(s)
    }
}

impl<'de> Deserialize<'de> for ServiceId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        ServiceId::new(raw).map_err(serde::de::Error::custom)
    }
}

/// Which side of a proxied request the logging sidecar was on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// The sidecar's own service issued the request.
    Outbound,
    /// The request arrived from elsewhere in the mesh.
    Inbound,
    /// Neither prefix matched, e.g. a passthrough cluster.
    Unknown,
}

/// Provenance of a log file: the service whose sidecar wrote it.
///
/// The log format never names the logging service, so provenance comes from
/// outside the record: the `<service>.<namespace>.log` filename convention
/// or an explicit manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogSource {
    /// Service whose sidecar produced the file.
    pub service: ServiceId,
    /// Path the entries were read from.
    pub path: PathBuf,
}

impl LogSource {
    /// Bind a file to an explicitly known owning service.
    pub fn new(service: ServiceId, path: impl Into<PathBuf>) -> Self {
        LogSource { service, path: path.into() }
    }

    /// Derive the owning service from a `<service>.<namespace>.log` filename.
    pub fn from_path(path: impl Into<PathBuf>) -> Result<Self, ServiceIdError> {
        let path = path.into();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let service = ServiceId::new(stem)?;
        Ok(LogSource { service, path })
    }
}

/// One access-log record in the sidecar's default JSON field set.
///
/// `duration` arrives in milliseconds and is stored as `duration_ms`.
/// Fields outside this set are ignored rather than rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessLogEntry {
    /// Request start, UTC.
    pub start_time: DateTime<Utc>,
    pub method: String,
    pub path: String,
    pub protocol: String,
    pub response_code: u16,
    /// Total request duration in milliseconds.
    #[serde(rename = "duration")]
    pub duration_ms: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Correlation id; the same request appears under one id in the caller's
    /// outbound log and the callee's inbound log.
    pub request_id: String,
    /// Host header, `<service>:<port>` inside the mesh.
    pub authority: String,
    /// Envoy cluster, e.g. `outbound|8080||b-service.default.svc.cluster.local`.
    pub upstream_cluster: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream_host: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream_local_address: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downstream_local_address: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downstream_remote_address: Option<String>,
    #[serde(default = "default_response_flags")]
    pub response_flags: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_agent: Option<String>,
}

fn default_response_flags() -> String {
    "-".to_string()
}

/// Why a single log line was rejected; ingest counts these and moves on.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{reason}")]
pub struct ParseFailure {
    pub reason: String,
}

/// Parse one raw log line into an [`AccessLogEntry`].
///
/// Blank input, malformed JSON, missing required fields, and out-of-range
/// status codes are all [`ParseFailure`]s.
pub fn parse_line(line: &str) -> Result<AccessLogEntry, ParseFailure> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Err(ParseFailure { reason: "blank line".to_string() });
    }
    let entry: AccessLogEntry =
        serde_json::from_str(trimmed).map_err(|e| ParseFailure { reason: e.to_string() })?;
    if !(100..=599).contains(&entry.response_code) {
        let reason = format!("response_code {} out of range", entry.response_code);
        return Err(ParseFailure { reason });
    }
    if entry.upstream_cluster.is_empty() {
        return Err(ParseFailure { reason: "empty upstream_cluster".to_string() });
    }
    Ok(entry)
}

/// Classify a record by its `upstream_cluster` prefix.
///
/// Only outbound records attribute a call to the logging service; an inbound
/// record describes the same request from the receiving side and would
/// double-count it.
pub fn classify_direction(entry: &AccessLogEntry) -> Direction {
    if entry.upstream_cluster.starts_with("outbound|") {
        Direction::Outbound
    } else if entry.upstream_cluster.starts_with("inbound|") {
        Direction::Inbound
    } else {
        Direction::Unknown
    }
}

/// Resolve the callee of an outbound record.
///
/// Prefers the fourth `|`-separated segment of `upstream_cluster`. When that
/// segment is empty or unusable, falls back to the `authority` host,
/// borrowing the source's namespace if the host carries none of its own.
/// `None` means the record cannot be attributed to a destination.
pub fn destination_service(entry: &AccessLogEntry, source: &ServiceId) -> Option<ServiceId> {
    if let Some(segment) = entry.upstream_cluster.split('|').nth(3) {
        if !segment.is_empty() {
            if let Ok(id) = ServiceId::from_cluster_dns(segment) {
                return Some(id);
            }
        }
    }
    let host = entry.authority.split(':').next().unwrap_or("");
    if host.is_empty() {
        return None;
    }
    let host = host.strip_suffix(".svc.cluster.local").unwrap_or(host);
    if host.contains('.') {
        ServiceId::new(host).ok()
    } else {
        ServiceId::new(format!("{host}.{}", source.namespace())).ok()
    }
}

/// Canonicalize a request path into an endpoint label.
///
/// Strips the query string. With `collapse_ids`, purely numeric and
/// UUID-shaped segments become `{id}` so per-entity URLs don't explode the
/// endpoint set.
pub fn normalize_path(path: &str, collapse_ids: bool) -> String {
    let path = path.split('?').next().unwrap_or("");
    if !collapse_ids {
        return path.to_string();
    }
    path.split('/')
        .map(|segment| if is_volatile_segment(segment) { "{id}" } else { segment })
        .collect::<Vec<_>>()
        .join("/")
}

fn is_volatile_segment(segment: &str) -> bool {
    if segment.is_empty() {
        return false;
    }
    segment.bytes().all(|b| b.is_ascii_digit()) || is_uuid_shaped(segment)
}

fn is_uuid_shaped(segment: &str) -> bool {
    segment.len() == 36
        && segment.char_indices().all(|(i, c)| match i {
            8 | 13 | 18 | 23 => c == '-',
            _ => c.is_ascii_hexdigit(),
        })
}

/// Rejected time window: `from` must not exceed `to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("invalid window: from {from} is after to {to}")]
pub struct InvalidWindow {
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
}

/// Keep entries with `from <= start_time < to`; either bound may be open.
pub fn filter_window(
    entries: Vec<AccessLogEntry>,
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
) -> Result<Vec<AccessLogEntry>, InvalidWindow> {
    if let (Some(f), Some(t)) = (from, to) {
        if f > t {
            return Err(InvalidWindow { from: f, to: t });
        }
    }
    let kept = entries
        .into_iter()
        .filter(|e| from.is_none_or(|f| e.start_time >= f) && to.is_none_or(|t| e.start_time < t))
        .collect();
    Ok(kept)
}

/// Line-level rejection recorded during a file scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineFailure {
    /// 1-based line number within the file.
    pub line_number: u64,
    pub reason: String,
}

/// Parsed contents of a single sidecar log file.
///
/// Blank lines are skipped outright and appear in neither `entries` nor
/// `failures`, so `entries.len() + failures.len()` equals the number of
/// non-blank lines seen.
#[derive(Debug, Clone)]
pub struct FileScan {
    pub source: LogSource,
    pub entries: Vec<AccessLogEntry>,
    pub failures: Vec<LineFailure>,
}

impl FileScan {
    /// Non-blank lines seen by the scan.
    pub fn lines_seen(&self) -> u64 {
        (self.entries.len() + self.failures.len()) as u64
    }
}

/// Read and parse one log file.
pub fn scan_file(source: LogSource) -> io::Result<FileScan> {
    let file = File::open(&source.path)?;
    scan_reader(source, BufReader::new(file))
}

/// Parse log lines from any buffered reader; see [`scan_file`].
pub fn scan_reader<R: BufRead>(source: LogSource, reader: R) -> io::Result<FileScan> {
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(entry) => entries.push(entry),
            Err(failure) => {
                failures.push(LineFailure { line_number: index as u64 + 1, reason: failure.reason })
            }
        }
    }
    Ok(FileScan { source, entries, failures })
}

/// One manifest row binding a file to its owning service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// File name or relative path, resolved against the log directory.
    pub file: String,
    /// Owning service as `<service>.<namespace>`.
    pub service: ServiceId,
}

/// Failure while enumerating log sources.
#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("manifest entry {file:?} points at a missing file")]
    MissingFile { file: PathBuf },
    #[error(
        "cannot infer owning service for {path}: {source}; \
         name files <service>.<namespace>.log or list them in a manifest"
    )]
    UnattributableFile {
        path: PathBuf,
        #[source]
        source: ServiceIdError,
    },
}

/// Enumerate the log files of a directory, sorted by path.
///
/// Every `*.log` file must either follow the `<service>.<namespace>.log`
/// naming convention or be covered by the manifest, a JSON array of
/// `{"file", "service"}` rows. Manifest rows may also pull in files whose
/// names don't end in `.log`.
pub fn discover_sources(
    logs_dir: &Path,
    manifest: Option<&Path>,
) -> Result<Vec<LogSource>, DiscoveryError> {
    let mut services: BTreeMap<PathBuf, ServiceId> = BTreeMap::new();

    if let Some(manifest_path) = manifest {
        let text = fs::read_to_string(manifest_path)
            .map_err(|source| DiscoveryError::Io { path: manifest_path.to_path_buf(), source })?;
        let rows: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| {
            DiscoveryError::Manifest { path: manifest_path.to_path_buf(), reason: e.to_string() }
        })?;
        for row in rows {
            let path = logs_dir.join(&row.file);
            if !path.is_file() {
                return Err(DiscoveryError::MissingFile { file: path });
            }
            services.insert(path, row.service);
        }
    }

    let listing = fs::read_dir(logs_dir)
        .map_err(|source| DiscoveryError::Io { path: logs_dir.to_path_buf(), source })?;
    for dirent in listing {
        let dirent =
            dirent.map_err(|source| DiscoveryError::Io { path: logs_dir.to_path_buf(), source })?;
        let path = dirent.path();
        if !path.is_file() || path.extension().is_none_or(|ext| ext != "log") {
            continue;
        }
        if services.contains_key(&path) {
            continue;
        }
        let source = LogSource::from_path(&path)
            .map_err(|source| DiscoveryError::UnattributableFile { path: path.clone(), source })?;
        services.insert(path, source.service);
    }

    Ok(services.into_iter().map(|(path, service)| LogSource { service, path }).collect())
}
