//! Deterministic synthetic access-log corpora.
//!
//! Given a declared topology (who calls whom, how often), this writes a
//! directory of per-service log files shaped like real sidecar output:
//! every call appears as an outbound record in the caller's file and,
//! optionally, as a mirrored inbound record in the callee's file. The same
//! spec and seed always produce byte-identical files, and the returned
//! ledger states exactly what was generated so pipelines can be checked
//! end to end against an independent expectation.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access_log::ServiceId;
use crate::sdg::EdgeKey;

/// One edge of the declared topology: repeated calls between two services.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSpec {
    pub source: ServiceId,
    pub destination: ServiceId,
    /// Request path recorded verbatim in the generated records.
    pub endpoint: String,
    #[serde(default = "default_method")]
    pub method: String,
    /// Number of requests to generate; must be at least 1.
    pub count: u64,
    #[serde(default = "default_status")]
    pub status_code: u16,
}

fn default_method() -> String {
    "GET".to_string()
}

fn default_status() -> u16 {
    200
}

/// Time range the generated timestamps fall into, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

/// Complete description of a corpus to generate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    /// Every service that gets a log file, calling or not.
    pub services: Vec<ServiceId>,
    pub calls: Vec<CallSpec>,
    pub time_span: TimeSpan,
    /// Seed for all generated randomness; same seed, same bytes.
    pub seed: u64,
    /// Also write each call as an inbound record in the callee's file.
    #[serde(default = "default_true")]
    pub mirror_inbound: bool,
}

fn default_true() -> bool {
    true
}

/// Rejected topology spec.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid topology: {0}")]
pub struct TopologyError(pub String);

impl TopologySpec {
    /// Parse a spec from JSON.
    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        serde_json::from_str(text).map_err(|e| TopologyError(e.to_string()))
    }

    /// Check the spec's invariants; returns advisory warnings on success.
    pub fn validate(&self) -> Result<Vec<String>, TopologyError> {
        if self.services.is_empty() {
            return Err(TopologyError("no services declared".to_string()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for service in &self.services {
            if !seen.insert(service) {
                return Err(TopologyError(format!("service {service} declared twice")));
            }
        }
        if self.time_span.start >= self.time_span.end {
            return Err(TopologyError(format!(
                "time span start {} is not before end {}",
                self.time_span.start, self.time_span.end
            )));
        }
        let mut warnings = Vec::new();
        for (i, call) in self.calls.iter().enumerate() {
            let place = |what: &str| format!("call {i} ({what})");
            if call.count == 0 {
                return Err(TopologyError(place("count must be at least 1")));
            }
            if call.endpoint.is_empty() {
                return Err(TopologyError(place("empty endpoint")));
            }
            for side in [&call.source, &call.destination] {
                if !seen.contains(side) {
                    return Err(TopologyError(format!(
                        "call {i} references undeclared service {side}"
                    )));
                }
            }
            if call.source == call.destination {
                warnings.push(format!("call {i}: {} calls itself", call.source));
            }
        }
        Ok(warnings)
    }
}

/// One generated request, from the generator's own books.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerRecord {
    pub source: ServiceId,
    pub destination: ServiceId,
    pub endpoint: String,
    pub method: String,
    pub timestamp: DateTime<Utc>,
    pub status_code: u16,
}

/// What [`generate_logs`] actually wrote: the independent ground truth a
/// pipeline's output can be compared against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ledger {
    /// Requests generated; mirrored inbound records are not extra requests.
    pub total_requests: u64,
    /// Expected edge weights of a graph built from the corpus.
    pub edge_counts: BTreeMap<EdgeKey, u64>,
    /// Every generated request, in generation order.
    pub records: Vec<LedgerRecord>,
    /// All files written, one per declared service.
    pub files: Vec<(ServiceId, PathBuf)>,
}

/// Generation failure.
#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Spec(#[from] TopologyError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// JSON layout of a generated record, field order matching sidecar output.
#[derive(Serialize)]
struct GenRecord<'a> {
    start_time: &'a str,
    upstream_host: &'a str,
    downstream_local_address: &'a str,
    upstream_transport_failure_reason: Option<&'a str>,
    protocol: &'a str,
    upstream_service_time: &'a str,
    authority: &'a str,
    requested_server_name: Option<&'a str>,
    response_code_details: &'a str,
    connection_termination_details: Option<&'a str>,
    upstream_local_address: &'a str,
    downstream_remote_address: &'a str,
    path: &'a str,
    bytes_sent: u64,
    request_id: &'a str,
    bytes_received: u64,
    route_name: &'a str,
    duration: u64,
    x_forwarded_for: Option<&'a str>,
    response_flags: &'a str,
    response_code: u16,
    method: &'a str,
    upstream_cluster: &'a str,
    user_agent: &'a str,
}

/// Write the corpus described by `spec` into `out_dir`, one
/// `<service>.<namespace>.log` file per declared service.
///
/// Files are created even for services that see no traffic; a silent sidecar
/// still produces a file. Output is deterministic: per-file records are
/// sorted by timestamp with a stable tie break, and every random draw comes
/// from a stream seeded by `spec.seed` alone.
pub fn generate_logs(spec: &TopologySpec, out_dir: &Path) -> Result<Ledger, GenerateError> {
    spec.validate()?;
    fs::create_dir_all(out_dir)
        .map_err(|source| GenerateError::Io { path: out_dir.to_path_buf(), source })?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let span_ms = (spec.time_span.end - spec.time_span.start).num_milliseconds().max(1) as u64;

    let mut pending: PendingLines<'_> = spec.services.iter().map(|s| (s, Vec::new())).collect();
    let mut sequence: u64 = 0;
    let mut records = Vec::new();
    let mut edge_counts: BTreeMap<EdgeKey, u64> = BTreeMap::new();

    for call in &spec.calls {
        let port = port_for(&call.destination);
        let outbound_cluster =
            format!("outbound|{port}||{}.svc.cluster.local", call.destination.as_str());
        let inbound_cluster = format!("inbound|{port}||");
        let authority = format!("{}:{port}", call.destination.service());
        let source_pod = pod_ip(&call.source);
        let destination_pod = pod_ip(&call.destination);
        let cluster_ip = service_cluster_ip(&call.destination);

        for _ in 0..call.count {
            let offset = rng.random_range(0..span_ms);
            let timestamp = spec.time_span.start + Duration::milliseconds(offset as i64);
            let start_time = timestamp.to_rfc3339_opts(SecondsFormat::Millis, true);
            let duration: u64 = rng.random_range(1..250);
            let bytes_sent: u64 = rng.random_range(0..4096);
            let bytes_received: u64 = rng.random_range(0..512);
            let request_id = request_id(&mut rng);
            let caller_port: u16 = rng.random_range(32768..61000);
            let sidecar_port: u16 = rng.random_range(32768..61000);
            let upstream_service_time = duration.saturating_sub(1).to_string();

            let outbound = GenRecord {
                start_time: &start_time,
                upstream_host: &format!("{destination_pod}:{port}"),
                downstream_local_address: &format!("{cluster_ip}:{port}"),
                upstream_transport_failure_reason: None,
                protocol: "HTTP/1.1",
                upstream_service_time: &upstream_service_time,
                authority: &authority,
                requested_server_name: None,
                response_code_details: "via_upstream",
                connection_termination_details: None,
                upstream_local_address: &format!("{source_pod}:{sidecar_port}"),
                downstream_remote_address: &format!("{source_pod}:{caller_port}"),
                path: &call.endpoint,
                bytes_sent,
                request_id: &request_id,
                bytes_received,
                route_name: "default",
                duration,
                x_forwarded_for: None,
                response_flags: "-",
                response_code: call.status_code,
                method: &call.method,
                upstream_cluster: &outbound_cluster,
                user_agent: USER_AGENT,
            };
            push_line(&mut pending, &call.source, timestamp, &mut sequence, &outbound);

            if spec.mirror_inbound {
                let inbound = GenRecord {
                    upstream_host: &format!("{destination_pod}:{port}"),
                    downstream_local_address: &format!("{destination_pod}:{port}"),
                    upstream_local_address: &format!("127.0.0.6:{sidecar_port}"),
                    downstream_remote_address: &format!("{source_pod}:{caller_port}"),
                    upstream_cluster: &inbound_cluster,
                    ..outbound
                };
                push_line(&mut pending, &call.destination, timestamp, &mut sequence, &inbound);
            }

            records.push(LedgerRecord {
                source: call.source.clone(),
                destination: call.destination.clone(),
                endpoint: call.endpoint.clone(),
                method: call.method.clone(),
                timestamp,
                status_code: call.status_code,
            });
        }

        let key = EdgeKey::new(
            call.source.clone(),
            call.destination.clone(),
            call.endpoint.clone(),
            call.method.clone(),
        );
        *edge_counts.entry(key).or_insert(0) += call.count;
    }

    let mut files = Vec::new();
    for (service, mut lines) in pending {
        lines.sort_by_key(|line| (line.0, line.1));
        let path = out_dir.join(format!("{service}.log"));
        let file = File::create(&path)
            .map_err(|source| GenerateError::Io { path: path.clone(), source })?;
        let mut writer = BufWriter::new(file);
        for (_, _, line) in &lines {
            writeln!(writer, "{line}")
                .map_err(|source| GenerateError::Io { path: path.clone(), source })?;
        }
        writer.flush().map_err(|source| GenerateError::Io { path: path.clone(), source })?;
        files.push((service.clone(), path));
    }

    let total_requests = records.len() as u64;
    Ok(Ledger { total_requests, edge_counts, records, files })
}

const USER_AGENT: &str = "synthetic-client/1.0";

/// Per-service buffer of (timestamp, tie-break sequence, rendered line).
type PendingLines<'a> = BTreeMap<&'a ServiceId, Vec<(DateTime<Utc>, u64, String)>>;

fn push_line(
    pending: &mut PendingLines<'_>,
    service: &ServiceId,
    timestamp: DateTime<Utc>,
    sequence: &mut u64,
    record: &GenRecord<'_>,
) {
    let line = serde_json::to_string(record).expect("generated record serializes");
    pending
        .get_mut(service)
        .expect("calls validated against declared services")
        .push((timestamp, *sequence, line));
    *sequence += 1;
}

fn request_id(rng: &mut ChaCha8Rng) -> String {
    let bits: u128 = rng.random();
    format!(
        "{:08x}-{:04x}-{:04x}-{:04x}-{:012x}",
        (bits >> 96) as u32,
        (bits >> 80) as u16,
        (bits >> 64) as u16,
        (bits >> 48) as u16,
        bits & 0xffff_ffff_ffff,
    )
}

/// Conventional port for the destination, by naming convention.
fn port_for(service: &ServiceId) -> u16 {
    let name = service.as_str();
    if name.contains("mongo") {
        27017
    } else if name.contains("mysql") || name.contains("mariadb") {
        3306
    } else if name.contains("postgres") {
        5432
    } else if name.contains("redis") {
        6379
    } else {
        8080
    }
}

/// Stable fake pod address derived from the service name.
fn pod_ip(service: &ServiceId) -> String {
    let h = name_hash(service, 0x9e37);
    format!("10.244.{}.{}", (h >> 8) as u8, h as u8)
}

/// Stable fake cluster address derived from the service name.
fn service_cluster_ip(service: &ServiceId) -> String {
    let h = name_hash(service, 0x7f4a);
    format!("10.96.{}.{}", (h >> 8) as u8, h as u8)
}

fn name_hash(service: &ServiceId, salt: u16) -> u16 {
    service.as_str().bytes().fold(salt, |acc, b| acc.wrapping_mul(31).wrapping_add(b as u16))
}
