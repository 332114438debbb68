//! Coupling metrics and structural findings.
//!
//! The absolute importance of a service (AIS) is its count of distinct
//! callers, the absolute dependence (ADS) its count of distinct callees, and
//! the absolute criticality (ACS) their product: a service many depend on
//! that itself depends on many is both a likely bottleneck and a risky
//! change target. On top of these, this module finds dependency cycles,
//! datastores shared by several services, and unversioned API endpoints.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::access_log::ServiceId;
use crate::sdg::ServiceDependencyGraph;

/// Per-service degree and coupling metrics.
///
/// Self-calls never count toward degrees: a service is not its own
/// dependency. `in_degree` therefore always equals `ais` and `out_degree`
/// equals `ads`; both spellings are kept because consumers ask for them
/// under both names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub service: ServiceId,
    pub in_degree: u64,
    pub out_degree: u64,
    /// Absolute importance: distinct services calling this one.
    pub ais: u64,
    /// Absolute dependence: distinct services this one calls.
    pub ads: u64,
    /// Absolute criticality: `ais * ads`.
    pub acs: u64,
}

/// Compute one [`MetricsRow`] per node, sorted by service name.
pub fn compute_metrics(graph: &ServiceDependencyGraph) -> Vec<MetricsRow> {
    let adjacency = graph.service_adjacency();
    let mut in_degrees: BTreeMap<&ServiceId, u64> = adjacency.keys().map(|n| (*n, 0)).collect();
    for callees in adjacency.values() {
        for callee in callees {
            *in_degrees.get_mut(callee).expect("callee is a node") += 1;
        }
    }
    adjacency
        .iter()
        .map(|(service, callees)| {
            let ais = in_degrees[service];
            let ads = callees.len() as u64;
            MetricsRow {
                service: (*service).clone(),
                in_degree: ais,
                out_degree: ads,
                ais,
                ads,
                acs: ais * ads,
            }
        })
        .collect()
}

/// Cycle structure of a graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    /// Tangled-pair score: unordered service pairs that can reach each other
    /// through calls, summed as `|c| * (|c| - 1) / 2` per component.
    pub siy: u64,
    /// Strongly connected components of size two or more, members sorted,
    /// components ordered by their first member.
    pub components: Vec<Vec<ServiceId>>,
    /// Services that call themselves; kept apart from `siy`, which counts
    /// pairs of distinct services.
    pub self_loops: Vec<ServiceId>,
    /// Pairs with a direct edge in both directions; a lower bound on `siy`
    /// useful when narrowing down where a tangle comes from.
    pub direct_mutual_pairs: u64,
}

/// Find all dependency cycles via strongly connected components.
///
/// Mutual reachability is path-based: `a -> b -> c -> a` tangles all three
/// pairs even though no two services call each other directly.
pub fn detect_cycles(graph: &ServiceDependencyGraph) -> CycleReport {
    let nodes: Vec<&ServiceId> = graph.nodes().collect();
    let index: BTreeMap<&ServiceId, usize> =
        nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let adjacency_map = graph.service_adjacency();
    let adjacency: Vec<Vec<usize>> =
        nodes.iter().map(|n| adjacency_map[*n].iter().map(|m| index[*m]).collect()).collect();

    let mut components: Vec<Vec<ServiceId>> = strongly_connected(&adjacency)
        .into_iter()
        .filter(|component| component.len() >= 2)
        .map(|component| {
            let mut members: Vec<ServiceId> =
                component.into_iter().map(|i| nodes[i].clone()).collect();
            members.sort();
            members
        })
        .collect();
    components.sort();

    let siy = components.iter().map(|c| pairs_in(c.len() as u64)).sum();

    let mut direct_mutual_pairs = 0;
    for (a, callees) in &adjacency_map {
        for b in callees {
            if *a < *b && adjacency_map[*b].contains(a) {
                direct_mutual_pairs += 1;
            }
        }
    }

    CycleReport { siy, components, self_loops: graph.self_loop_services(), direct_mutual_pairs }
}

fn pairs_in(size: u64) -> u64 {
    size * (size - 1) / 2
}

/// Tarjan's algorithm; every vertex lands in exactly one component.
fn strongly_connected(adjacency: &[Vec<usize>]) -> Vec<Vec<usize>> {
    struct State<'a> {
        adjacency: &'a [Vec<usize>],
        index: Vec<Option<usize>>,
        lowlink: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next_index: usize,
        components: Vec<Vec<usize>>,
    }

    impl State<'_> {
        fn visit(&mut self, v: usize) {
            self.index[v] = Some(self.next_index);
            self.lowlink[v] = self.next_index;
            self.next_index += 1;
            self.stack.push(v);
            self.on_stack[v] = true;

            for &w in &self.adjacency[v] {
                if self.index[w].is_none() {
                    self.visit(w);
                    self.lowlink[v] = self.lowlink[v].min(self.lowlink[w]);
                } else if self.on_stack[w] {
                    self.lowlink[v] = self.lowlink[v].min(self.index[w].unwrap());
                }
            }

            if Some(self.lowlink[v]) == self.index[v] {
                let mut component = Vec::new();
                loop {
                    let w = self.stack.pop().expect("root still on stack");
                    self.on_stack[w] = false;
                    component.push(w);
                    if w == v {
                        break;
                    }
                }
                self.components.push(component);
            }
        }
    }

    let n = adjacency.len();
    let mut state = State {
        adjacency,
        index: vec![None; n],
        lowlink: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next_index: 0,
        components: Vec::new(),
    };
    for v in 0..n {
        if state.index[v].is_none() {
            state.visit(v);
        }
    }
    state.components
}

/// A datastore pattern that failed to compile.
#[derive(Debug, Error)]
#[error("invalid pattern {pattern:?}: {source}")]
pub struct InvalidPattern {
    pub pattern: String,
    #[source]
    pub source: regex::Error,
}

/// Decides which services are datastores, by name.
///
/// Mesh logs show a database only as one more callee; naming conventions
/// (`ts-order-mongo`, `billing-db`) are the only signal available without
/// deployment metadata.
#[derive(Debug, Clone)]
pub struct DatastoreClassifier {
    patterns: Vec<Regex>,
}

impl DatastoreClassifier {
    /// Name fragments that mark a service as a datastore by default.
    pub const DEFAULT_PATTERNS: [&'static str; 6] =
        ["mongo", "mysql", "postgres", "redis", "mariadb", "-db"];

    /// Compile a classifier from regex fragments; an unanchored fragment
    /// matches anywhere in the `<service>.<namespace>` name.
    pub fn new<I, S>(patterns: I) -> Result<Self, InvalidPattern>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let patterns = patterns
            .into_iter()
            .map(|p| {
                Regex::new(p.as_ref())
                    .map_err(|source| InvalidPattern { pattern: p.as_ref().to_string(), source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DatastoreClassifier { patterns })
    }

    pub fn is_datastore(&self, service: &ServiceId) -> bool {
        self.patterns.iter().any(|p| p.is_match(service.as_str()))
    }

    /// The source fragments, for echoing into reports.
    pub fn patterns(&self) -> Vec<String> {
        self.patterns.iter().map(|p| p.as_str().to_string()).collect()
    }
}

impl Default for DatastoreClassifier {
    fn default() -> Self {
        DatastoreClassifier::new(Self::DEFAULT_PATTERNS).expect("default patterns compile")
    }
}

/// A datastore with more than one non-datastore service writing to it.
///
/// Shared persistency couples services through data they do not own: a
/// schema change by one sharer breaks the others without any API changing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersistencyFinding {
    pub datastore: ServiceId,
    /// The distinct non-datastore callers, sorted; always at least two.
    pub sharers: Vec<ServiceId>,
}

/// Report every datastore with two or more distinct non-datastore callers.
pub fn detect_shared_persistency(
    graph: &ServiceDependencyGraph,
    classifier: &DatastoreClassifier,
) -> Vec<PersistencyFinding> {
    graph
        .nodes()
        .filter(|n| classifier.is_datastore(n))
        .filter_map(|datastore| {
            let sharers: Vec<ServiceId> = graph
                .predecessors(datastore)
                .expect("iterating graph nodes")
                .into_iter()
                .filter(|p| !classifier.is_datastore(p))
                .collect();
            (sharers.len() >= 2)
                .then(|| PersistencyFinding { datastore: datastore.clone(), sharers })
        })
        .collect()
}

/// Endpoint prefixes that count as versioned by default.
pub const DEFAULT_VERSION_PATTERN: &str = "^/api/v[0-9]+(/|$)";

/// Compile a version-detection pattern.
pub fn compile_version_pattern(pattern: &str) -> Result<Regex, InvalidPattern> {
    Regex::new(pattern).map_err(|source| InvalidPattern { pattern: pattern.to_string(), source })
}

/// Versioning verdict for one observed endpoint.
///
/// Unversioned endpoints make lockstep deployment the only safe upgrade
/// path, because no URL distinguishes old consumers from new ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersioningFinding {
    pub source: ServiceId,
    pub destination: ServiceId,
    pub endpoint: String,
    pub versioned: bool,
}

/// Judge every distinct (source, destination, endpoint) triple against the
/// version pattern; methods are irrelevant to versioning and collapsed.
pub fn check_api_versioning(
    graph: &ServiceDependencyGraph,
    pattern: &Regex,
) -> Vec<VersioningFinding> {
    let mut seen: BTreeMap<(&ServiceId, &ServiceId, &str), bool> = BTreeMap::new();
    for (key, _) in graph.edges() {
        seen.entry((&key.source, &key.destination, key.endpoint.as_str()))
            .or_insert_with(|| pattern.is_match(&key.endpoint));
    }
    seen.into_iter()
        .map(|((source, destination, endpoint), versioned)| VersioningFinding {
            source: source.clone(),
            destination: destination.clone(),
            endpoint: endpoint.to_string(),
            versioned,
        })
        .collect()
}

/// Services ordered by criticality, highest ACS first, ties by name.
pub fn rank_bottlenecks(rows: &[MetricsRow]) -> Vec<(ServiceId, u64)> {
    let mut ranked: Vec<(ServiceId, u64)> =
        rows.iter().map(|r| (r.service.clone(), r.acs)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}
