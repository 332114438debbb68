//! The service dependency graph: services as nodes, observed calls as
//! weighted edges keyed by source, destination, endpoint, and method.
//!
//! An edge weight is the number of requests seen for that key, so the graph
//! is simultaneously a topology (who may call whom) and a traffic heat map
//! (how hard each dependency is exercised).

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access_log::{
    classify_direction, destination_service, normalize_path, AccessLogEntry, Direction, ServiceId,
};

/// Identity of a dependency edge; the weight lives beside it, not in it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub source: ServiceId,
    pub destination: ServiceId,
    /// Normalized request path, e.g. `/api/v1/orderservice/order`.
    pub endpoint: String,
    pub method: String,
}

impl EdgeKey {
    pub fn new(
        source: ServiceId,
        destination: ServiceId,
        endpoint: impl Into<String>,
        method: impl Into<String>,
    ) -> Self {
        EdgeKey { source, destination, endpoint: endpoint.into(), method: method.into() }
    }
}

/// A weighted edge as it appears in serialized snapshots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdgEdge {
    pub source: ServiceId,
    pub destination: ServiceId,
    pub endpoint: String,
    pub method: String,
    /// Requests observed for this key; always at least 1.
    pub weight: u64,
}

/// Observation window the graph was built over; either bound may be open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

/// Structural error raised by graph construction or merging.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("unknown service: {0}")]
    UnknownService(ServiceId),
    #[error("edge weight must be positive: {0} -> {1} {2} [{3}]")]
    ZeroWeight(ServiceId, ServiceId, String, String),
    #[error("edge references {0}, which is missing from the node set")]
    MissingNode(ServiceId),
    #[error("windows do not overlap: [{0:?}, {1:?}) and [{2:?}, {3:?})")]
    WindowMismatch(
        Option<DateTime<Utc>>,
        Option<DateTime<Utc>>,
        Option<DateTime<Utc>>,
        Option<DateTime<Utc>>,
    ),
}

/// Weighted, endpoint-labeled directed multigraph over services.
///
/// Nodes and edges are kept in sorted collections so iteration order, and
/// therefore every artifact derived from the graph, is deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ServiceDependencyGraph {
    nodes: BTreeSet<ServiceId>,
    edges: BTreeMap<EdgeKey, u64>,
    window: Option<TimeWindow>,
    total_requests: u64,
}

impl ServiceDependencyGraph {
    /// Empty graph with no observation window.
    pub fn new() -> Self {
        ServiceDependencyGraph::default()
    }

    /// Build a graph directly from weighted edges, plus optional extra
    /// isolated nodes. Every edge endpoint becomes a node automatically; a
    /// zero weight is rejected.
    pub fn from_edges<I>(
        edges: I,
        extra_nodes: impl IntoIterator<Item = ServiceId>,
        window: Option<TimeWindow>,
    ) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (EdgeKey, u64)>,
    {
        let mut graph = ServiceDependencyGraph { window, ..Default::default() };
        for node in extra_nodes {
            graph.nodes.insert(node);
        }
        for (key, weight) in edges {
            if weight == 0 {
                return Err(GraphError::ZeroWeight(
                    key.source,
                    key.destination,
                    key.endpoint,
                    key.method,
                ));
            }
            graph.nodes.insert(key.source.clone());
            graph.nodes.insert(key.destination.clone());
            graph.total_requests += weight;
            *graph.edges.entry(key).or_insert(0) += weight;
        }
        Ok(graph)
    }

    /// Record one observed call, creating nodes and the edge as needed.
    pub fn record_call(&mut self, key: EdgeKey) {
        self.nodes.insert(key.source.clone());
        self.nodes.insert(key.destination.clone());
        self.total_requests += 1;
        *self.edges.entry(key).or_insert(0) += 1;
    }

    /// Add a node that may have no observed traffic at all.
    pub fn declare_node(&mut self, service: ServiceId) {
        self.nodes.insert(service);
    }

    /// Pin the observation window the graph claims to cover.
    pub fn set_window(&mut self, window: Option<TimeWindow>) {
        self.window = window;
    }

    pub fn window(&self) -> Option<TimeWindow> {
        self.window
    }

    /// Sum of all edge weights.
    pub fn total_requests(&self) -> u64 {
        self.total_requests
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, service: &ServiceId) -> bool {
        self.nodes.contains(service)
    }

    /// All nodes in sorted order.
    pub fn nodes(&self) -> impl Iterator<Item = &ServiceId> {
        self.nodes.iter()
    }

    /// All edges in sorted key order.
    pub fn edges(&self) -> impl Iterator<Item = (&EdgeKey, u64)> {
        self.edges.iter().map(|(key, weight)| (key, *weight))
    }

    pub fn edge_weight(&self, key: &EdgeKey) -> Option<u64> {
        self.edges.get(key).copied()
    }

    /// Distinct services calling `service`, the service itself excluded.
    pub fn predecessors(&self, service: &ServiceId) -> Result<BTreeSet<ServiceId>, GraphError> {
        self.require(service)?;
        Ok(self
            .edges
            .keys()
            .filter(|k| &k.destination == service && k.source != k.destination)
            .map(|k| k.source.clone())
            .collect())
    }

    /// Distinct services called by `service`, the service itself excluded.
    pub fn successors(&self, service: &ServiceId) -> Result<BTreeSet<ServiceId>, GraphError> {
        self.require(service)?;
        Ok(self
            .edges
            .keys()
            .filter(|k| &k.source == service && k.source != k.destination)
            .map(|k| k.destination.clone())
            .collect())
    }

    /// Total weight of edges into `service`, self-calls included.
    pub fn inbound_weight(&self, service: &ServiceId) -> Result<u64, GraphError> {
        self.require(service)?;
        Ok(self.edges.iter().filter(|(k, _)| &k.destination == service).map(|(_, w)| w).sum())
    }

    /// Total weight of edges out of `service`, self-calls included.
    pub fn outbound_weight(&self, service: &ServiceId) -> Result<u64, GraphError> {
        self.require(service)?;
        Ok(self.edges.iter().filter(|(k, _)| &k.source == service).map(|(_, w)| w).sum())
    }

    /// Service-level adjacency with self-edges dropped: for every node, the
    /// distinct services it calls.
    pub fn service_adjacency(&self) -> BTreeMap<&ServiceId, BTreeSet<&ServiceId>> {
        let mut adjacency: BTreeMap<&ServiceId, BTreeSet<&ServiceId>> =
            self.nodes.iter().map(|n| (n, BTreeSet::new())).collect();
        for key in self.edges.keys() {
            if key.source != key.destination {
                adjacency
                    .get_mut(&key.source)
                    .expect("edge source is a node")
                    .insert(&key.destination);
            }
        }
        adjacency
    }

    /// Distinct services with an edge to themselves, sorted.
    pub fn self_loop_services(&self) -> Vec<ServiceId> {
        let set: BTreeSet<ServiceId> = self
            .edges
            .keys()
            .filter(|k| k.source == k.destination)
            .map(|k| k.source.clone())
            .collect();
        set.into_iter().collect()
    }

    /// Serializable copy of the graph.
    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            nodes: self.nodes.iter().cloned().collect(),
            edges: self
                .edges
                .iter()
                .map(|(k, w)| SdgEdge {
                    source: k.source.clone(),
                    destination: k.destination.clone(),
                    endpoint: k.endpoint.clone(),
                    method: k.method.clone(),
                    weight: *w,
                })
                .collect(),
            window: self.window,
            total_requests: self.total_requests,
        }
    }

    /// Rebuild a graph from a snapshot, revalidating its invariants.
    pub fn from_snapshot(snapshot: GraphSnapshot) -> Result<Self, GraphError> {
        let nodes: BTreeSet<ServiceId> = snapshot.nodes.into_iter().collect();
        for edge in &snapshot.edges {
            for endpoint in [&edge.source, &edge.destination] {
                if !nodes.contains(endpoint) {
                    return Err(GraphError::MissingNode(endpoint.clone()));
                }
            }
        }
        let edges = snapshot
            .edges
            .into_iter()
            .map(|e| (EdgeKey::new(e.source, e.destination, e.endpoint, e.method), e.weight));
        ServiceDependencyGraph::from_edges(edges, nodes, snapshot.window)
    }

    fn require(&self, service: &ServiceId) -> Result<(), GraphError> {
        if self.nodes.contains(service) {
            Ok(())
        } else {
            Err(GraphError::UnknownService(service.clone()))
        }
    }
}

/// Serializable mirror of [`ServiceDependencyGraph`], embedded in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    /// Sorted node list.
    pub nodes: Vec<ServiceId>,
    /// Edges sorted by (source, destination, endpoint, method).
    pub edges: Vec<SdgEdge>,
    pub window: Option<TimeWindow>,
    pub total_requests: u64,
}

/// Knobs for building a graph from parsed log entries.
#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    /// Collapse numeric and UUID path segments into `{id}`.
    pub collapse_ids: bool,
    /// Drop outbound records with non-2xx status instead of counting them.
    pub success_only: bool,
    /// Window stamped onto the graph; entries are assumed pre-filtered.
    pub window: Option<TimeWindow>,
    /// Nodes that must exist even if no traffic touches them.
    pub declared_nodes: BTreeSet<ServiceId>,
}

/// Where the non-edge-producing entries went, for honesty in summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct BuildDiagnostics {
    /// Outbound entries that became edge weight.
    pub calls_recorded: u64,
    /// Inbound entries skipped to avoid double counting.
    pub inbound_skipped: u64,
    /// Entries with an unrecognized cluster, e.g. passthrough traffic.
    pub unknown_direction_skipped: u64,
    /// Outbound entries whose destination could not be resolved.
    pub unresolved_destination: u64,
    /// Outbound entries dropped by the success-only filter.
    pub status_filtered: u64,
    /// Recorded calls whose source and destination coincide.
    pub self_calls: u64,
}

/// Outcome of [`build_graph`].
#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub graph: ServiceDependencyGraph,
    pub diagnostics: BuildDiagnostics,
}

/// Fold parsed entries, each paired with the service whose sidecar logged
/// it, into a dependency graph.
///
/// Only outbound entries create edges; inbound entries describe a request
/// already counted on the caller's side. The result does not depend on entry
/// order.
pub fn build_graph<'a, I>(entries: I, options: &BuildOptions) -> BuildOutput
where
    I: IntoIterator<Item = (&'a ServiceId, &'a AccessLogEntry)>,
{
    let mut graph = ServiceDependencyGraph::new();
    graph.set_window(options.window);
    for node in &options.declared_nodes {
        graph.declare_node(node.clone());
    }
    let mut diagnostics = BuildDiagnostics::default();

    for (source, entry) in entries {
        match classify_direction(entry) {
            Direction::Inbound => diagnostics.inbound_skipped += 1,
            Direction::Unknown => diagnostics.unknown_direction_skipped += 1,
            Direction::Outbound => {
                if options.success_only && !(200..=299).contains(&entry.response_code) {
                    diagnostics.status_filtered += 1;
                    continue;
                }
                let Some(destination) = destination_service(entry, source) else {
                    diagnostics.unresolved_destination += 1;
                    continue;
                };
                if destination == *source {
                    diagnostics.self_calls += 1;
                }
                let endpoint = normalize_path(&entry.path, options.collapse_ids);
                graph.record_call(EdgeKey::new(
                    source.clone(),
                    destination,
                    endpoint,
                    entry.method.clone(),
                ));
                diagnostics.calls_recorded += 1;
            }
        }
    }

    BuildOutput { graph, diagnostics }
}

/// Union two graphs, adding weights of shared edge keys.
///
/// The merged window is the envelope of both inputs; an open bound on either
/// side stays open.
pub fn merge(a: &ServiceDependencyGraph, b: &ServiceDependencyGraph) -> ServiceDependencyGraph {
    let mut merged = a.clone();
    merged.window = envelope(a.window, b.window);
    for node in &b.nodes {
        merged.nodes.insert(node.clone());
    }
    for (key, weight) in &b.edges {
        merged.total_requests += weight;
        *merged.edges.entry(key.clone()).or_insert(0) += weight;
    }
    merged
}

/// Like [`merge`], but refuse to combine graphs whose observation windows
/// cannot overlap, since their union would describe no real time range.
pub fn merge_strict(
    a: &ServiceDependencyGraph,
    b: &ServiceDependencyGraph,
) -> Result<ServiceDependencyGraph, GraphError> {
    if let (Some(wa), Some(wb)) = (a.window, b.window) {
        if disjoint(wa, wb) {
            return Err(GraphError::WindowMismatch(wa.from, wa.to, wb.from, wb.to));
        }
    }
    Ok(merge(a, b))
}

fn envelope(a: Option<TimeWindow>, b: Option<TimeWindow>) -> Option<TimeWindow> {
    let (a, b) = match (a, b) {
        (Some(a), Some(b)) => (a, b),
        // A missing window means "unbounded"; the envelope is too.
        _ => return None,
    };
    let from = match (a.from, b.from) {
        (Some(x), Some(y)) => Some(x.min(y)),
        _ => None,
    };
    let to = match (a.to, b.to) {
        (Some(x), Some(y)) => Some(x.max(y)),
        _ => None,
    };
    Some(TimeWindow { from, to })
}

fn disjoint(a: TimeWindow, b: TimeWindow) -> bool {
    let before = |end: Option<DateTime<Utc>>, start: Option<DateTime<Utc>>| match (end, start) {
        (Some(end), Some(start)) => end <= start,
        _ => false,
    };
    before(a.to, b.from) || before(b.to, a.from)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(s: &str) -> ServiceId {
        ServiceId::new(s).unwrap()
    }

    fn key(src: &str, dst: &str, endpoint: &str) -> EdgeKey {
        EdgeKey::new(sid(src), sid(dst), endpoint, "GET")
    }

    fn graph(edges: &[(&str, &str, &str, u64)]) -> ServiceDependencyGraph {
        ServiceDependencyGraph::from_edges(
            edges.iter().map(|(s, d, e, w)| (key(s, d, e), *w)),
            [],
            None,
        )
        .unwrap()
    }

    fn at(s: &str) -> DateTime<Utc> {
        s.parse().unwrap()
    }

    #[test]
    fn record_call_accumulates_weight() {
        let mut g = ServiceDependencyGraph::new();
        g.record_call(key("a.ns", "b.ns", "/x"));
        g.record_call(key("a.ns", "b.ns", "/x"));
        g.record_call(key("a.ns", "b.ns", "/y"));
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.edge_weight(&key("a.ns", "b.ns", "/x")), Some(2));
        assert_eq!(g.total_requests(), 3);
    }

    #[test]
    fn degree_queries_exclude_self_but_weights_include_it() {
        let g = graph(&[
            ("a.ns", "b.ns", "/x", 5),
            ("b.ns", "b.ns", "/self", 2),
            ("b.ns", "c.ns", "/y", 1),
        ]);
        let b = sid("b.ns");
        assert_eq!(g.predecessors(&b).unwrap(), BTreeSet::from([sid("a.ns")]));
        assert_eq!(g.successors(&b).unwrap(), BTreeSet::from([sid("c.ns")]));
        assert_eq!(g.inbound_weight(&b).unwrap(), 7);
        assert_eq!(g.outbound_weight(&b).unwrap(), 3);
        assert_eq!(g.self_loop_services(), vec![sid("b.ns")]);
    }

    #[test]
    fn unknown_service_is_an_error() {
        let g = graph(&[("a.ns", "b.ns", "/x", 1)]);
        assert!(matches!(g.predecessors(&sid("nope.ns")), Err(GraphError::UnknownService(_))));
    }

    #[test]
    fn isolated_declared_node_has_empty_neighborhoods() {
        let g = ServiceDependencyGraph::from_edges([], [sid("lonely.ns")], None).unwrap();
        assert_eq!(g.node_count(), 1);
        assert!(g.predecessors(&sid("lonely.ns")).unwrap().is_empty());
        assert!(g.successors(&sid("lonely.ns")).unwrap().is_empty());
    }

    #[test]
    fn zero_weight_edges_are_rejected() {
        let err = ServiceDependencyGraph::from_edges([(key("a.ns", "b.ns", "/x"), 0)], [], None);
        assert!(matches!(err, Err(GraphError::ZeroWeight(..))));
    }

    #[test]
    fn build_counts_only_outbound_entries() {
        let outbound = r#"{"start_time":"2022-05-26T06:22:02.661Z","method":"GET",
            "path":"/api/v1/endpoint/","protocol":"HTTP/1.1","response_code":200,
            "duration":7,"bytes_sent":44,"bytes_received":0,
            "request_id":"r-1","authority":"b-service:12345",
            "upstream_cluster":"outbound|12345||b-service.default.svc.cluster.local"}"#;
        let entry = crate::access_log::parse_line(outbound).unwrap();
        let mut inbound = entry.clone();
        inbound.upstream_cluster = "inbound|12345||".to_string();
        let mut passthrough = entry.clone();
        passthrough.upstream_cluster = "PassthroughCluster".to_string();
        let mut failed = entry.clone();
        failed.response_code = 503;

        let a = sid("a-service.default");
        let b = sid("b-service.default");
        let entries =
            [(&a, &entry), (&a, &entry), (&b, &inbound), (&a, &passthrough), (&a, &failed)];

        let output = build_graph(entries, &BuildOptions::default());
        let expected = key("a-service.default", "b-service.default", "/api/v1/endpoint/");
        // Without the success filter the failed call still proves the dependency.
        assert_eq!(output.graph.edge_weight(&expected), Some(3));
        assert_eq!(output.graph.total_requests(), 3);
        assert_eq!(output.diagnostics.inbound_skipped, 1);
        assert_eq!(output.diagnostics.unknown_direction_skipped, 1);
        assert_eq!(output.diagnostics.calls_recorded, 3);

        let strict = BuildOptions { success_only: true, ..Default::default() };
        let output = build_graph(entries, &strict);
        assert_eq!(output.graph.edge_weight(&expected), Some(2));
        assert_eq!(output.diagnostics.status_filtered, 1);
    }

    #[test]
    fn merge_adds_weights_and_unions_nodes() {
        let a = graph(&[("a.ns", "b.ns", "/x", 2)]);
        let b = graph(&[("a.ns", "b.ns", "/x", 3), ("b.ns", "c.ns", "/y", 1)]);
        let merged = merge(&a, &b);
        assert_eq!(merged.edge_weight(&key("a.ns", "b.ns", "/x")), Some(5));
        assert_eq!(merged.node_count(), 3);
        assert_eq!(merged.total_requests(), 6);
        // Merging with an empty graph is the identity.
        assert_eq!(merge(&a, &ServiceDependencyGraph::new()), a);
        assert_eq!(merge(&ServiceDependencyGraph::new(), &a), a);
        // Merge is symmetric.
        assert_eq!(merge(&a, &b), merge(&b, &a));
    }

    #[test]
    fn merge_windows_form_an_envelope() {
        let mut a = graph(&[("a.ns", "b.ns", "/x", 1)]);
        let mut b = graph(&[("b.ns", "c.ns", "/y", 1)]);
        a.set_window(Some(TimeWindow {
            from: Some(at("2022-05-26T06:00:00Z")),
            to: Some(at("2022-05-26T06:10:00Z")),
        }));
        b.set_window(Some(TimeWindow { from: Some(at("2022-05-26T06:05:00Z")), to: None }));
        let merged = merge(&a, &b);
        let window = merged.window().unwrap();
        assert_eq!(window.from, Some(at("2022-05-26T06:00:00Z")));
        assert_eq!(window.to, None, "an open bound stays open");
    }

    #[test]
    fn strict_merge_rejects_disjoint_windows() {
        let mut a = graph(&[("a.ns", "b.ns", "/x", 1)]);
        let mut b = graph(&[("b.ns", "c.ns", "/y", 1)]);
        a.set_window(Some(TimeWindow {
            from: Some(at("2022-05-26T06:00:00Z")),
            to: Some(at("2022-05-26T06:10:00Z")),
        }));
        b.set_window(Some(TimeWindow {
            from: Some(at("2022-05-26T07:00:00Z")),
            to: Some(at("2022-05-26T07:10:00Z")),
        }));
        assert!(matches!(merge_strict(&a, &b), Err(GraphError::WindowMismatch(..))));
        b.set_window(None);
        assert!(merge_strict(&a, &b).is_ok(), "open windows can always overlap");
    }

    #[test]
    fn snapshot_round_trips() {
        let mut g = graph(&[("a.ns", "b.ns", "/x", 2), ("b.ns", "c.ns", "/y", 1)]);
        g.declare_node(sid("idle.ns"));
        g.set_window(Some(TimeWindow { from: Some(at("2022-05-26T06:00:00Z")), to: None }));
        let snapshot = g.snapshot();
        let rebuilt = ServiceDependencyGraph::from_snapshot(snapshot.clone()).unwrap();
        assert_eq!(rebuilt, g);

        let json = serde_json::to_string(&snapshot).unwrap();
        let reparsed: GraphSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(reparsed, snapshot);
    }

    #[test]
    fn snapshot_with_dangling_edge_is_rejected() {
        let snapshot = GraphSnapshot {
            nodes: vec![sid("a.ns")],
            edges: vec![SdgEdge {
                source: sid("a.ns"),
                destination: sid("ghost.ns"),
                endpoint: "/x".to_string(),
                method: "GET".to_string(),
                weight: 1,
            }],
            window: None,
            total_requests: 1,
        };
        assert!(matches!(
            ServiceDependencyGraph::from_snapshot(snapshot),
            Err(GraphError::MissingNode(_))
        ));
    }
}
